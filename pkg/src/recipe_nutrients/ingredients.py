"""Ingredient line parsing and quantity-to-grams conversion.

Recipe lines look like "1/2 cup butter, without salt" or just "salt". Parsing
is a total function: anything unrecognized falls back to quantity 1 of unit
"unit" with the whole line as the name. Gram conversion goes through an
editable table (see data/conversion_table.json) with per-ingredient overrides
for density-dependent units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

# alias -> canonical lowercase singular unit
UNIT_ALIASES = {
    "tbsp": "tablespoon",
    "tbsps": "tablespoon",
    "tablespoon": "tablespoon",
    "tablespoons": "tablespoon",
    "tsp": "teaspoon",
    "tsps": "teaspoon",
    "teaspoon": "teaspoon",
    "teaspoons": "teaspoon",
    "cup": "cup",
    "cups": "cup",
    "ml": "ml",
    "milliliter": "ml",
    "milliliters": "ml",
    "g": "g",
    "gram": "g",
    "grams": "g",
    "kg": "kg",
    "kilogram": "kg",
    "kilograms": "kg",
    "oz": "ounce",
    "ounce": "ounce",
    "ounces": "ounce",
    "lb": "pound",
    "lbs": "pound",
    "pound": "pound",
    "pounds": "pound",
    "pinch": "pinch",
    "pinches": "pinch",
    "bunch": "bunch",
    "bunches": "bunch",
}

# quantity words that mean "one of"
_ONE_WORDS = {"a", "an"}


@dataclass(frozen=True)
class ParsedIngredient:
    quantity: Fraction
    unit: str
    name: str


@dataclass
class ConversionTable:
    """Grams-per-unit factors. Per-ingredient entries win over generic ones."""

    generic: dict[str, float]
    per_ingredient: dict[str, dict[str, float]] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for unit, grams in self.generic.items():
            if grams <= 0:
                raise ValueError(f"generic factor for {unit!r} must be > 0")
        for unit, keywords in self.per_ingredient.items():
            for keyword, grams in keywords.items():
                if grams <= 0:
                    raise ValueError(f"factor for ({unit!r}, {keyword!r}) must be > 0")

    @classmethod
    def from_file(cls, path: str | Path) -> "ConversionTable":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            generic=dict(raw["generic"]),
            per_ingredient={u: dict(kw) for u, kw in raw.get("per_ingredient", {}).items()},
            notes=dict(raw.get("notes", {})),
        )

    @classmethod
    def default(cls) -> "ConversionTable":
        ref = resources.files("recipe_nutrients.data") / "conversion_table.json"
        with resources.as_file(ref) as path:
            return cls.from_file(path)


def parse_quantity(token: str) -> Fraction:
    """Parse an integer, decimal, fraction "a/b", or mixed number "a b/c"."""
    token = token.strip()
    parts = token.split()
    if len(parts) == 2:
        return parse_quantity(parts[0]) + parse_quantity(parts[1])
    if len(parts) != 1:
        raise ValueError(f"cannot parse quantity {token!r}")
    text = parts[0]
    if "/" in text:
        num_text, _, den_text = text.partition("/")
        try:
            num, den = int(num_text), int(den_text)
        except ValueError as exc:
            raise ValueError(f"cannot parse fraction {text!r}") from exc
        if den == 0:
            raise ValueError(f"zero denominator in {text!r}")
        return Fraction(num, den)
    try:
        return Fraction(text)  # handles "2" and "2.5" exactly
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"cannot parse quantity {text!r}") from exc


def parse_ingredient(line: str) -> ParsedIngredient:
    """Split one ingredient line into (quantity, unit, name). Never fails.

    Leading quantity tokens (integers, decimals, fractions, mixed numbers,
    "a"/"an") are consumed, then one unit alias; whatever remains is the
    name. Lines with no quantity parse as 1 "unit" of the whole line.
    """
    tokens = line.split()
    if not tokens:
        raise ValueError("ingredient line is empty")

    quantity: Fraction | None = None
    pos = 0
    first = tokens[0].lower()
    if first in _ONE_WORDS:
        quantity = Fraction(1)
        pos = 1
    else:
        try:
            quantity = parse_quantity(tokens[0])
            pos = 1
            # mixed number: "1 1/2 cup ..."
            if pos < len(tokens) and "/" in tokens[pos]:
                try:
                    quantity = quantity + parse_quantity(tokens[pos])
                    pos += 1
                except ValueError:
                    pass
        except ValueError:
            quantity = None

    if quantity is None:
        return ParsedIngredient(quantity=Fraction(1), unit="unit", name=line.strip())

    unit = "unit"
    if pos < len(tokens):
        alias = tokens[pos].lower().rstrip(".,;")
        if alias in UNIT_ALIASES:
            unit = UNIT_ALIASES[alias]
            pos += 1

    name = " ".join(tokens[pos:]).strip()
    if not name:
        # bare quantity like "2 cups": keep the line text as the name
        name = line.strip()
    return ParsedIngredient(quantity=quantity, unit=unit, name=name)


def to_grams(quantity: Fraction | float, unit: str, name: str, table: ConversionTable) -> float:
    """Convert a quantity of a unit to grams via the table.

    Per-ingredient factors are chosen by keyword containment in the name,
    longest keyword first; otherwise the generic factor applies.
    """
    factor = None
    keywords = table.per_ingredient.get(unit)
    if keywords:
        lowered = name.lower()
        best = None
        for keyword in keywords:
            if keyword in lowered and (best is None or len(keyword) > len(best)):
                best = keyword
        if best is not None:
            factor = keywords[best]
    if factor is None:
        factor = table.generic.get(unit)
    if factor is None:
        known = sorted(set(table.generic) | set(table.per_ingredient))
        raise LookupError(f"no conversion for unit {unit!r}; known units: {', '.join(known)}")
    return float(quantity) * factor


def recipe_mass(lines: list[str], table: ConversionTable) -> tuple[float, list[str]]:
    """Total grams over parseable lines plus the lines that could not convert."""
    total = 0.0
    unresolved: list[str] = []
    for line in lines:
        parsed = parse_ingredient(line)
        try:
            total += to_grams(parsed.quantity, parsed.unit, parsed.name, table)
        except LookupError:
            unresolved.append(line)
    return total, unresolved
