"""
Synthetic benchmark with CTA, CPA and TTA labels.

Every table belongs to one topic (its TTA label). A topic contributes one
companion column whose format identifies the topic, and possibly several
ambiguous columns: uniform 4-digit integers whose gold type (year, price in
cents, postal code, flight number) can only be read off the companion column.
The remaining columns come from shared, format-distinct types.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .config import SynthConfig
from .tables import SPLITS, AnnotatedTable, Dataset, LabelSpace, Table, Task

logger = logging.getLogger(__name__)

_SYLLABLES = ["ka", "lo", "mi", "ra", "ten", "vi", "do", "sel", "mar", "quin", "bo", "ley", "an", "tor", "es"]
_CITY_SUFFIX = ["ville", "burg", "ford", "ton", "haven", "field"]
_STREETS = ["Oak", "Maple", "Cedar", "Hill", "Lake", "Park", "Mill", "Church"]
_STREET_KINDS = ["Street", "Avenue", "Road", "Lane", "Drive"]
_EVENT_ADJ = ["Spring", "Summer", "Autumn", "Winter", "Grand", "Annual", "Open"]
_EVENT_NOUN = ["Festival", "Gala", "Summit", "Marathon", "Expo", "Concert", "Fair"]
_PRODUCTS = ["Kettle", "Lamp", "Backpack", "Blender", "Headset", "Toaster", "Monitor"]
_DOMAINS = ["example.com", "mail.net", "post.org", "inbox.io"]
_LETTERS = np.array(list("ABCDEFGHIJKLMNOPQRSTUVWXYZ"))


def _word(rng: np.random.Generator, parts: int) -> str:
    return "".join(rng.choice(_SYLLABLES, size=parts)).capitalize()


def _digits(rng: np.random.Generator, n: int) -> str:
    return "".join(str(d) for d in rng.integers(0, 10, size=n))


Generator = Callable[[np.random.Generator], str]

GENERATORS: Dict[str, Generator] = {
    # shared types
    "person_name": lambda r: f"{_word(r, 2)} {_word(r, 3)}",
    "city": lambda r: _word(r, 2) + str(r.choice(_CITY_SUFFIX)),
    "phone": lambda r: f"({_digits(r, 3)}) {_digits(r, 3)}-{_digits(r, 4)}",
    "identifier": lambda r: f"ID-{_digits(r, 5)}",
    "email": lambda r: f"{_word(r, 2).lower()}.{_word(r, 1).lower()}@{r.choice(_DOMAINS)}",
    "date": lambda r: f"{r.integers(1990, 2025)}-{r.integers(1, 13):02d}-{r.integers(1, 29):02d}",
    # companion types
    "event_name": lambda r: f"{r.choice(_EVENT_ADJ)} {_word(r, 2)} {r.choice(_EVENT_NOUN)}",
    "product_name": lambda r: f"{_word(r, 2)} {r.choice(_PRODUCTS)} {r.choice(_LETTERS)}{r.integers(1, 10)}",
    "street_address": lambda r: f"{r.integers(1, 999)} {r.choice(_STREETS)} {r.choice(_STREET_KINDS)}",
    "airport_code": lambda r: "".join(r.choice(_LETTERS, size=3)),
}


def _ambiguous_value(rng: np.random.Generator) -> str:
    return str(rng.integers(1000, 10000))


@dataclass(frozen=True)
class Topic:
    name: str
    companion: str
    ambiguous: str
    relation: str


TOPICS: Tuple[Topic, ...] = (
    Topic("events", "event_name", "year", "event_year"),
    Topic("retail", "product_name", "price_cents", "product_price"),
    Topic("addresses", "street_address", "postal_code", "street_postcode"),
    Topic("flights", "airport_code", "flight_number", "airport_flight"),
)

SHARED_TYPES = ("person_name", "city", "phone", "identifier", "email", "date")


def label_spaces() -> Dict[Task, LabelSpace]:
    cta = SHARED_TYPES + tuple(t.companion for t in TOPICS) + tuple(t.ambiguous for t in TOPICS)
    cpa = tuple(f"has_{s}" for s in SHARED_TYPES) + tuple(t.relation for t in TOPICS)
    return {
        Task.CTA: LabelSpace(Task.CTA, cta),
        Task.CPA: LabelSpace(Task.CPA, cpa),
        Task.TTA: LabelSpace(Task.TTA, tuple(t.name for t in TOPICS)),
    }


def ambiguous_type_for(companion: str) -> str:
    """Gold type of a 4-digit column given the companion column type in its table."""
    return next(t.ambiguous for t in TOPICS if t.companion == companion)


def _stochastic_round(rng: np.random.Generator, x: float) -> int:
    base = int(np.floor(x))
    return base + int(rng.random() < x - base)


def _make_table(rng: np.random.Generator, config: SynthConfig, table_id: str) -> AnnotatedTable:
    topic = TOPICS[int(rng.integers(len(TOPICS)))]
    n = int(rng.integers(config.min_columns, config.max_columns + 1))
    rows = int(rng.integers(config.min_rows, config.max_rows + 1))
    k = min(max(_stochastic_round(rng, config.ambiguity * n), 0), n - 1)
    shared = rng.choice(SHARED_TYPES[:config.n_base_types], size=n - 1 - k)

    types = [topic.companion] + [topic.ambiguous] * k + [str(s) for s in shared]
    order = rng.permutation(n)
    types = [types[i] for i in order]

    columns = []
    for t in types:
        gen = _ambiguous_value if t == topic.ambiguous else GENERATORS[t]
        columns.append([gen(rng) for _ in range(rows)])

    subject = types.index(topic.companion)
    cpa = tuple(
        (subject, j, topic.relation if t == topic.ambiguous else f"has_{t}")
        for j, t in enumerate(types) if j != subject
    )
    return AnnotatedTable(Table.from_cells(table_id, columns), cta=tuple(types), cpa=cpa, tta=topic.name)


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Deterministic in config.seed; splits are generated in train, valid, test order."""
    rng = np.random.default_rng(config.seed)
    sizes = {"train": config.n_train, "valid": config.n_valid, "test": config.n_test}
    splits: Dict[str, List[AnnotatedTable]] = {}
    for name in SPLITS:
        splits[name] = [_make_table(rng, config, f"{name}-{i:05d}") for i in range(sizes[name])]
    logger.info(f"Generated synthetic dataset (seed={config.seed}, ambiguity={config.ambiguity}): "
                + ", ".join(f"{k}={len(v)}" for k, v in splits.items()))
    return Dataset(tuple(splits["train"]), tuple(splits["valid"]), tuple(splits["test"]), label_spaces())
