#!/usr/bin/env python3
"""Regenerate the desk-scale fixture corpus. Deterministic: fixed seeds only.

Run from the repository root:

    python3 fixtures/generate_fixtures.py
"""

from __future__ import annotations

import json
import random
from pathlib import Path

FIXTURES = Path(__file__).parent

CATEGORIES = [
    "general_qa", "ocr", "caption", "chart", "math",
    "science", "grounding", "knowledge", "conversation",
]

SUBJECTS = ["cat", "dog", "bridge", "market", "mountain", "harbor", "garden", "train", "library", "street"]
COLORS = ["red", "blue", "green", "golden", "white", "weathered"]
SCENES = ["at dawn", "in the rain", "under neon lights", "beside the river", "in autumn", "after the storm"]
NOISE = ["buy now", "best price", "click here", "free shipping 2015", "stock photo id 8841"]

# Questions the stub judge answers correctly from text alone (rule -> answer),
# used by the 60-sample end-to-end conversation fixture.
E2E_ANSWERABLE = [
    ("What is two plus two?", "two plus two", "4"),
    ("How many days are in a week?", "days are in a week", "7"),
    ("What is the capital of France?", "capital of France", "Paris"),
    ("How many legs does a spider have?", "legs does a spider", "8"),
    ("What is the freezing point of water in Celsius?", "freezing point of water", "0"),
    ("How many minutes are in an hour?", "minutes are in an hour", "60"),
    ("What is the first month of the year?", "first month of the year", "January"),
    ("How many continents are there?", "continents are there", "7"),
    ("What is five times five?", "five times five", "25"),
    ("How many letters are in the English alphabet?", "letters are in the English alphabet", "26"),
]

# (question, gold, judge rule needle, judge reply) for the 20-sample
# answerability fixture; the first seven match after normalization.
ANSWERABLE20 = [
    ("What is one plus one?", "2", "one plus one", "2"),
    ("Which option is correct? (A) sun (B) moon", "B", "Which option is correct", "b."),
    ("What is the capital of Italy?", "Rome", "capital of Italy", "rome"),
    ("How many sides does a triangle have?", "3", "sides does a triangle", "3."),
    ("What color is the clear daytime sky?", "blue", "clear daytime sky", "Blue"),
    ("Select the letter of the right choice: (C) rivers flow downhill.", "C", "Select the letter", "(c) rivers flow downhill"),
    ("What is ten minus three?", "7", "ten minus three", "7"),
]


def write_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def write_manifest(path: Path, name: str, records: str, kind: str, count: int, fixed_answers: bool = False) -> None:
    manifest = {
        "name": name,
        "records_path": records,
        "kind": kind,
        "counts": count,
        "fixed_answers": fixed_answers,
    }
    path.write_text(json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def captions() -> None:
    rng = random.Random(101)
    rows = []
    sizes = []
    for i in range(50):
        subject = SUBJECTS[i % len(SUBJECTS)]
        color = COLORS[rng.randrange(len(COLORS))]
        scene = SCENES[rng.randrange(len(SCENES))]
        caption = f"{color} {subject} {scene}"
        if i % 5 == 0:
            caption = f"{caption} {NOISE[rng.randrange(len(NOISE))]}"
        image = f"images/cap-{i:03d}.jpg"
        rows.append(
            {
                "id": f"cap-{i:03d}",
                "image_ref": image,
                "original_caption": caption,
                "language": "en",
            }
        )
        sizes.append(
            {
                "id": image,
                "width": int(rng.randrange(224, 1025)),
                "height": int(rng.randrange(224, 1025)),
            }
        )
    write_jsonl(FIXTURES / "captions.jsonl", rows)
    write_manifest(FIXTURES / "captions.manifest.json", "fixture-captions", "captions.jsonl", "caption", len(rows))
    (FIXTURES / "image_sizes.json").write_text(
        json.dumps(sizes, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def conversations() -> None:
    """60 samples: 9 with the 'teh' typo, 10 text-answerable, 41 image-grounded."""
    rng = random.Random(202)
    rows = []
    idx = 0

    def add(question: str, answer: str, language: str = "en") -> None:
        nonlocal idx
        rows.append(
            {
                "id": f"conv-{idx:03d}",
                "image_refs": [f"images/conv-{idx:03d}.jpg"],
                "turns": [
                    {"role": "user", "content": question},
                    {"role": "assistant", "content": answer},
                ],
                "dataset": "fixture-conversations",
                "category": CATEGORIES[idx % len(CATEGORIES)],
                "language": language,
                "labels": [],
                "provenance": "original",
            }
        )
        idx += 1

    for question, _needle, answer in E2E_ANSWERABLE:
        add(question, answer)
    for i in range(9):
        subject = SUBJECTS[rng.randrange(len(SUBJECTS))]
        add(f"What does teh {subject} look like in this picture?", f"Teh {subject} is clearly visible.")
    for i in range(29):
        subject = SUBJECTS[rng.randrange(len(SUBJECTS))]
        color = COLORS[rng.randrange(len(COLORS))]
        add(f"Describe the {subject} shown in the image.", f"A {color} {subject} occupies the frame.")
    for i in range(12):
        subject = SUBJECTS[rng.randrange(len(SUBJECTS))]
        add(f"图片里的{subject}是什么样子的？", f"图中可以看到一个{subject}。", language="zh")

    assert idx == 60, idx
    write_jsonl(FIXTURES / "conversations.jsonl", rows)
    write_manifest(
        FIXTURES / "conversations.manifest.json",
        "fixture-conversations",
        "conversations.jsonl",
        "conversation",
        len(rows),
        fixed_answers=True,
    )


def grammar100() -> None:
    """100 samples, exactly 15 flagged by the 'teh' stub judge."""
    rng = random.Random(303)
    flagged = set(rng.sample(range(100), 15))
    rows = []
    for i in range(100):
        subject = SUBJECTS[i % len(SUBJECTS)]
        color = COLORS[i % len(COLORS)]
        if i in flagged:
            question = f"Where is teh {subject} in this photo?"
            answer = f"Teh {subject} sits near the center."
        else:
            question = f"Where is the {subject} in this photo?"
            answer = f"The {color} {subject} sits near the center."
        rows.append(
            {
                "id": f"gram-{i:03d}",
                "image_refs": [f"images/gram-{i:03d}.jpg"],
                "turns": [
                    {"role": "user", "content": question},
                    {"role": "assistant", "content": answer},
                ],
                "dataset": "fixture-grammar",
                "category": CATEGORIES[i % len(CATEGORIES)],
                "language": "en",
                "labels": [],
                "provenance": "original",
            }
        )
    write_jsonl(FIXTURES / "grammar100.jsonl", rows)
    write_manifest(
        FIXTURES / "grammar100.manifest.json",
        "fixture-grammar",
        "grammar100.jsonl",
        "conversation",
        len(rows),
        fixed_answers=False,
    )


def answerable20() -> None:
    rows = []
    for i, (question, gold, _needle, _reply) in enumerate(ANSWERABLE20):
        rows.append((question, gold))
    fillers = [
        ("What text appears on the sign in the image?", "MAIN STREET"),
        ("How many people are visible in the photo?", "5"),
        ("What is written on the whiteboard?", "meeting at noon"),
        ("Which animal appears in the bottom left corner?", "fox"),
        ("What number is printed on the runner's shirt?", "42"),
        ("What is the license plate in the picture?", "KX-2041"),
        ("What time does the clock in the image show?", "10:15"),
        ("What brand name is on the storefront?", "Lumen"),
        ("How many windows does the building in the photo have?", "12"),
        ("What fruit is on the table in the image?", "pear"),
        ("What word is embroidered on the cap?", "voyager"),
        ("Which direction does the arrow sign point?", "left"),
        ("What color is the door in the photograph?", "green"),
    ]
    rows.extend(fillers)
    assert len(rows) == 20
    out = []
    for i, (question, gold) in enumerate(rows):
        out.append(
            {
                "id": f"ans-{i:03d}",
                "image_refs": [f"images/ans-{i:03d}.jpg"],
                "turns": [
                    {"role": "user", "content": question},
                    {"role": "assistant", "content": gold},
                ],
                "dataset": "fixture-answerable",
                "category": CATEGORIES[i % len(CATEGORIES)],
                "language": "en",
                "labels": [],
                "provenance": "original",
            }
        )
    write_jsonl(FIXTURES / "answerable20.jsonl", out)
    write_manifest(
        FIXTURES / "answerable20.manifest.json",
        "fixture-answerable",
        "answerable20.jsonl",
        "conversation",
        len(out),
        fixed_answers=True,
    )


def client_configs() -> None:
    clients_dir = FIXTURES / "clients"
    clients_dir.mkdir(exist_ok=True)

    vlm = {"backend": "stub", "template": "a sharp photo keyed to {image_ref} with one clear subject"}
    (clients_dir / "stub_vlm.json").write_text(json.dumps(vlm, indent=2) + "\n", encoding="utf-8")

    # Fusion prompt in prompts/fusion.json is "{original_caption} {vlm_caption}",
    # so echoing the payload models a concatenating merger. The translation rule
    # echoes just the text after the instruction block.
    llm = {
        "backend": "stub",
        "rules": [["Translate the following text into", "[zh]{tail}"]],
        "template": "merged: {tail}",
    }
    (clients_dir / "stub_llm.json").write_text(json.dumps(llm, indent=2) + "\n", encoding="utf-8")

    judge_rules = [["teh", "FLAG"], ["strict grammar reviewer", "PASS"]]
    for _q, needle, answer in E2E_ANSWERABLE:
        judge_rules.append([needle, answer])
    for _q, _gold, needle, reply in ANSWERABLE20:
        judge_rules.append([needle, reply])
    judge = {
        "backend": "stub",
        "rules": judge_rules,
        "template": "I cannot tell without the image.",
    }
    (clients_dir / "stub_judge.json").write_text(
        json.dumps(judge, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def prompt_configs() -> None:
    prompts_dir = FIXTURES / "prompts"
    prompts_dir.mkdir(exist_ok=True)
    fusion = {
        "vlm_caption_prompt": "Describe this image in one detailed sentence.",
        "fusion_prompt": "{original_caption} {vlm_caption}",
    }
    (prompts_dir / "fusion.json").write_text(json.dumps(fusion, indent=2) + "\n", encoding="utf-8")
    questions = [
        "请识别图中的所有文字。",
        "请把图片中的文字逐行转写出来。",
        "图中写了什么？请完整输出。",
        "请提取这张图片里的全部文本内容。",
    ]
    (prompts_dir / "ocr_questions.json").write_text(
        json.dumps(questions, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def pipeline_config() -> None:
    config = {
        "caption_manifest": "captions.manifest.json",
        "conversation_manifest": "conversations.manifest.json",
        "output_root": "out",
        "image_sizes": "image_sizes.json",
        "seeds": {"prompt": 13, "pack": 7},
        "clients": {
            "vlm": "clients/stub_vlm.json",
            "llm": "clients/stub_llm.json",
            "judge": "clients/stub_judge.json",
        },
        "prompts": {"fusion": {"fusion_prompt": "{original_caption} {vlm_caption}"}},
        "ppl": {"fraction": 0.2, "order": 2, "smoothing": 1.0},
        "filters": {"grammar_policy": "drop", "answerable_action": "label"},
        "template": {"kind": "conversation"},
        "packer": {"patch_size": 14, "merge": 2, "capacity": 4096},
    }
    (FIXTURES / "pipeline.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    tokens = {"tok-alice": "alice", "tok-bo": "bo", "tok-carol": "carol", "tok-dan": "dan"}
    (FIXTURES / "review_tokens.json").write_text(json.dumps(tokens, indent=2, sort_keys=True) + "\n", encoding="utf-8")


if __name__ == "__main__":
    captions()
    conversations()
    grammar100()
    answerable20()
    client_configs()
    prompt_configs()
    pipeline_config()
    print(f"fixtures written to {FIXTURES}")
