"""Shared builders for test corpora and evaluation fixtures.

Not a test module: the pipeline, CLI, and acceptance tests import these
helpers to write JSONL inputs and to build prediction/gold file pairs
with known exact scores.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

# ----- JSONL writing -----


def write_jsonl(path: str | Path, rows) -> Path:
    """Write one JSON object per line; creates parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows)
    path.write_text(text, encoding="utf-8")
    return path


def read_json_lines(path: str | Path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


# ----- document corpus builders -----

_WORD_POOL = (
    "alloy", "anode", "battery", "carbon", "cathode", "cell", "charge",
    "crystal", "current", "density", "device", "diode", "electron", "energy",
    "field", "film", "flux", "gain", "graphene", "grid", "heat", "ion",
    "lattice", "layer", "magnet", "matrix", "membrane", "metal", "module",
    "node", "orbit", "oxide", "particle", "phase", "photon", "pixel",
    "plasma", "polymer", "probe", "pulse", "quantum", "resin", "sensor",
    "signal", "silicon", "solvent", "spectrum", "spin", "substrate",
    "surface", "thermal", "torque", "vapor", "vector", "voltage", "wafer",
    "wave", "yield", "zeolite", "zinc", "zone", "filter", "kernel", "beam",
)


def distinct_body(index: int, n_words: int = 60) -> str:
    """A deterministic body that is not a near-duplicate of any other index.

    Random draws from a 64-word pool make the 3-word shingle overlap
    between two different indexes negligible, so these documents never
    land in the same duplicate cluster.
    """
    rng = random.Random(0xC0FFEE + index)
    return " ".join(rng.choice(_WORD_POOL) for _ in range(n_words))


def document_row(doc_id: str, body: str, **fields) -> dict:
    row = {"id": doc_id, "body": body}
    row.update(fields)
    return row


def pair_row(
    pair_id: str,
    instruction: str = "Summarize the finding.",
    response: str = "The finding holds.",
    *,
    domain: str = "general",
    task: str = "named_entity_recognition",
    language: str = "en",
    **fields,
) -> dict:
    row = {
        "id": pair_id,
        "instruction": instruction,
        "response": response,
        "domain": domain,
        "task": task,
        "language": language,
    }
    row.update(fields)
    return row


# ----- evaluation fixtures -----

EVAL_TASK_IDS = (
    "named_entity_recognition",
    "relation_extraction",
    "abstractive_summarization",
    "knowledge_linking",
    "topic_modeling",
    "abstract_to_title",
    "machine_translation",
    "relationship_predict",
    "knowledge_fusion",
    "semantic_matching",
)


def identity_eval_rows() -> tuple[list[dict], list[dict]]:
    """(pred_rows, gold_rows) where every benchmark task scores exactly 1.0.

    Predictions equal gold instance for instance, so the F1 metrics see
    perfect matches and the text metrics compare identical token streams.
    """
    preds: list[dict] = []
    golds: list[dict] = []

    def add(task: str, payloads: list[dict]) -> None:
        for i, payload in enumerate(payloads):
            rec_id = f"{task}-{i}"
            preds.append({"id": rec_id, "task": task, **payload})
            golds.append({"id": rec_id, "task": task, **payload})

    add("named_entity_recognition", [
        {"entities": [
            {"surface": "graphene", "entity_type": "MATERIAL", "start": 0, "end": 8},
        ]},
        {"entities": [
            {"surface": "copper", "entity_type": "MATERIAL", "start": 4, "end": 10},
            {"surface": "anode", "entity_type": "COMPONENT", "start": 14, "end": 19},
        ]},
    ])
    add("relation_extraction", [
        {"triples": [
            {"head": "graphene", "relation": "conducts", "tail": "electricity"},
        ]},
        {"triples": [
            {"head": "cathode", "relation": "part_of", "tail": "cell"},
            {"head": "dopant", "relation": "raises", "tail": "mobility"},
        ]},
    ])
    add("abstractive_summarization", [
        {"text": "the coating resists corrosion in salt spray"},
        {"text": "a faster route to low defect silicon wafers"},
    ])
    add("knowledge_linking", [
        {"items": ["q42", "q101"]},
        {"items": ["q7"]},
    ])
    add("topic_modeling", [
        {"terms": ["spin", "lattice", "magnon"]},
        {"terms": ["polymer", "melt", "shear"]},
    ])
    add("abstract_to_title", [
        {"text": "graphene oxide synthesis route"},
        {"text": "stable perovskite solar cells"},
    ])
    add("machine_translation", [
        {"text": "the crystal lattice is stable"},
        {"text": "heat flows from hot to cold"},
    ])
    add("relationship_predict", [
        {"label": "entails"},
        {"label": "neutral"},
    ])
    add("knowledge_fusion", [
        {"items": ["alloy strength", "fatigue life"]},
        {"items": ["band gap"]},
    ])
    add("semantic_matching", [
        {"items": ["matched claim one"]},
        {"items": ["matched claim two", "matched claim three"]},
    ])
    return preds, golds


def zero_eval_rows(gold_rows: list[dict]) -> list[dict]:
    """Predictions that score exactly 0.0 against the given gold rows.

    Structured tasks predict nothing, text tasks predict an irrelevant or
    empty string, and the classification task predicts a wrong label.
    """
    preds: list[dict] = []
    for gold in gold_rows:
        task = gold["task"]
        row: dict = {"id": gold["id"], "task": task}
        if task == "named_entity_recognition":
            row["entities"] = []
        elif task == "relation_extraction":
            row["triples"] = []
        elif task in ("knowledge_linking", "knowledge_fusion", "semantic_matching"):
            row["items"] = []
        elif task == "topic_modeling":
            row["terms"] = []
        elif task == "relationship_predict":
            row["label"] = "WRONG_" + gold["label"]
        else:  # Rouge / BLEU text tasks
            row["text"] = ""
        preds.append(row)
    return preds
