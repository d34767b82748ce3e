#!/usr/bin/env python3
"""Validates golden protocol files, live run artifacts and run configs against
the JSON schemas in schemas/.

usage: schema_conformance.py SCHEMAS_DIR FIXTURES_DIR LCT_BINARY
"""
import copy
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import jsonschema

SCHEMAS, FIXTURES, LCT = Path(sys.argv[1]), Path(sys.argv[2]), sys.argv[3]
failures = []


def validator(name):
    schema = json.loads((SCHEMAS / f"{name}.schema.json").read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    return jsonschema.Draft202012Validator(schema)


def expect(name, doc, valid, label):
    errors = list(validator(name).iter_errors(doc))
    if valid and errors:
        failures.append(f"{label}: rejected by {name}: {errors[0].message}")
    if not valid and not errors:
        failures.append(f"{label}: accepted by {name} but should be rejected")


def jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


proto = FIXTURES / "protocol"
expect("chat_request", json.loads((proto / "chat_request.json").read_text()), True, "chat_request.json")
expect("chat_response", json.loads((proto / "chat_response.json").read_text()), True, "chat_response.json")
expect("chat_response", json.loads((proto / "chat_response_length.json").read_text()), True,
       "chat_response_length.json")
expect("error_response", json.loads((proto / "error_response.json").read_text()), True, "error_response.json")
for i, doc in enumerate(jsonl(proto / "invalid_requests.jsonl")):
    expect("chat_request", doc, False, f"invalid_requests.jsonl:{i + 1}")

e2e = FIXTURES / "e2e"
for name in ("run_full.json", "run_theta.json"):
    expect("run_config", json.loads((e2e / name).read_text()), True, name)
full = json.loads((e2e / "run_full.json").read_text())
bad_edits = {
    "unknown top-level key": lambda c: c.update(surprise=1),
    "misspelt niah key": lambda c: c["niah"].update(lenghts=[1024]),
    "string seed": lambda c: c.update(seed="seven"),
    "n = 0": lambda c: c["eval"].update(n=0),
    "ratio above 1": lambda c: c["surgery"].update(merge_ratio=1.5),
    "ratio without donor": lambda c: c["surgery"].pop("donor"),
    "no stage": lambda c: [c.pop(k) for k in ("surgery", "niah", "data", "eval")],
    "bad length string": lambda c: c["niah"].update(lengths=["1.5k"]),
}
for label, edit in bad_edits.items():
    doc = copy.deepcopy(full)
    edit(doc)
    expect("run_config", doc, False, f"run config ({label})")
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "bad.json"
        cfg.write_text(json.dumps(doc))
        rc = subprocess.run([LCT, "run", str(cfg), "-o", str(Path(tmp) / "out")], capture_output=True, text=True)
        if rc.returncode == 0:
            failures.append(f"run config ({label}): lct run accepted it")

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "run"
    rc = subprocess.run([LCT, "run", str(e2e / "run_full.json"), "-o", str(out)], capture_output=True, text=True)
    if rc.returncode != 0:
        failures.append(f"lct run failed: {rc.stderr}{rc.stdout}")
    else:
        expect("report", json.loads((out / "eval" / "report.json").read_text()), True, "eval/report.json")
        for i, rec in enumerate(jsonl(out / "eval" / "records.jsonl")):
            expect("eval_record", rec, True, f"eval/records.jsonl:{i + 1}")

for f in failures:
    print("FAIL", f)
print(f"{len(failures)} schema conformance failure(s)")
sys.exit(1 if failures else 0)
