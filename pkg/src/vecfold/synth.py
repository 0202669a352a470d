"""Synthetic labeled post corpus for pipeline tests.

Generates marketplace-style posts in four car-part categories (tires,
lights, seats, body panels) with category-specific vocabulary, a few
shared filler words, and image references drawn from small per-category
filename pools.  Ground-truth category labels are written to a sidecar
JSON so clustering quality can be scored.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CATEGORIES = ("tires", "lights", "seats", "body_panels")

_VOCAB = {
    "tires": [
        "tire", "tires", "michelin", "goodyear", "bridgestone", "tread",
        "rim", "rims", "wheel", "wheels", "radial", "allseason", "winter",
        "sidewall", "lugnuts", "225/65r17", "alloy", "balanced",
    ],
    "lights": [
        "headlight", "headlights", "taillight", "taillights", "led",
        "halogen", "bulb", "bulbs", "lamp", "beam", "foglight", "drl",
        "lens", "hid", "projector", "signal", "housing", "brightness",
    ],
    "seats": [
        "seat", "seats", "leather", "upholstery", "bench", "recliner",
        "headrest", "cushion", "bucket", "heated", "armrest", "seatbelt",
        "lumbar", "fabric", "foam", "rails", "bracket", "reupholstered",
    ],
    "body_panels": [
        "bumper", "fender", "hood", "panel", "quarterpanel", "grille",
        "trunk", "spoiler", "mirror", "rocker", "tailgate", "primer",
        "sheetmetal", "doorskin", "valance", "cowl", "unpainted", "rustfree",
    ],
}

_TITLE_LEAD = {
    "tires": ["set", "pair", "new", "used"],
    "lights": ["oem", "aftermarket", "new", "used"],
    "seats": ["front", "rear", "complete", "used"],
    "body_panels": ["oem", "replacement", "straight", "used"],
}

_FILLER = ["good", "condition", "obo", "pickup", "cash", "clean", "fits", "must", "sell"]

_IMAGE_POOLS = {
    cat: [f"{cat}/photo_{i}.jpg" for i in range(1, 7)] for cat in CATEGORIES
}

_PLATFORM_CYCLE = ("offerup", "craigslist")


def make_synthetic_corpus(
    n_posts: int = 800,
    seed: int = 0,
    categories: tuple[str, ...] = CATEGORIES,
) -> tuple[list[dict], list[int]]:
    """Deterministically generate post records and their category labels.

    Categories rotate round-robin, so counts stay balanced for any
    ``n_posts``.  Image counts cycle through 0..3 to exercise every
    template phrasing.
    """
    rng = np.random.default_rng(seed)
    records: list[dict] = []
    labels: list[int] = []
    for i in range(n_posts):
        cat_idx = i % len(categories)
        cat = categories[cat_idx]
        vocab = _VOCAB[cat]

        title_words = [str(rng.choice(_TITLE_LEAD[cat]))] + [
            str(w) for w in rng.choice(vocab, size=2, replace=False)
        ]
        n_body = int(rng.integers(8, 15))
        body_words = [str(w) for w in rng.choice(vocab, size=n_body, replace=True)]
        n_filler = int(rng.integers(0, 3))
        body_words += [str(w) for w in rng.choice(_FILLER, size=n_filler, replace=False)]

        n_images = i % 4
        pool = _IMAGE_POOLS[cat]
        image_idx = rng.choice(len(pool), size=n_images, replace=False)
        images = [pool[j] for j in sorted(image_idx)]

        records.append(
            {
                "id": f"synth-{i:06d}",
                "platform": _PLATFORM_CYCLE[i % 2],
                "title": " ".join(title_words),
                "body": " ".join(body_words),
                "images": images,
                "price": round(float(rng.uniform(10, 500)), 2),
                "posted_at": f"2024-{(i % 12) + 1:02d}-{(i % 28) + 1:02d}T12:00:00Z",
            }
        )
        labels.append(cat_idx)
    return records, labels


def write_synthetic_corpus(
    out_path: str | Path,
    n_posts: int = 800,
    seed: int = 0,
    categories: tuple[str, ...] = CATEGORIES,
) -> tuple[Path, Path]:
    """Write the corpus JSONL plus a ``<path>.labels.json`` ground-truth
    sidecar mapping post id -> category index."""
    out_path = Path(out_path)
    records, labels = make_synthetic_corpus(n_posts, seed, categories)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    labels_path = Path(str(out_path) + ".labels.json")
    doc = {
        "categories": list(categories),
        "labels": {r["id"]: lab for r, lab in zip(records, labels)},
    }
    labels_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_path, labels_path


def read_labels_sidecar(labels_path: str | Path) -> dict[str, int]:
    doc = json.loads(Path(labels_path).read_text(encoding="utf-8"))
    return {k: int(v) for k, v in doc["labels"].items()}
