"""Runs every CLI subcommand and validates its JSON outputs against schemas/."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

from jsonschema import Draft202012Validator
from referencing import Registry, Resource


def load_registry(schema_dir: Path):
    schemas = {}
    for path in schema_dir.glob("*.schema.json"):
        doc = json.loads(path.read_text())
        Draft202012Validator.check_schema(doc)
        schemas[path.name] = doc
    registry = Registry().with_resources(
        (name, Resource.from_contents(doc)) for name, doc in schemas.items()
    )
    return schemas, registry


def main() -> int:
    cli, root = sys.argv[1], Path(sys.argv[2])
    schemas, registry = load_registry(root / "schemas")
    failures = []
    checked = 0

    def validate(schema: str, doc, label: str):
        nonlocal checked
        checked += 1
        errors = sorted(
            Draft202012Validator(schemas[schema], registry=registry).iter_errors(doc),
            key=lambda e: list(e.path),
        )
        for e in errors[:5]:
            failures.append(f"{label}: {'/'.join(map(str, e.path))}: {e.message}")

    def run(*args) -> dict:
        proc = subprocess.run([cli, *args], capture_output=True, text=True)
        if proc.returncode != 0:
            failures.append(f"{' '.join(args)} exited {proc.returncode}: {proc.stderr.strip()}")
            return {}
        return json.loads(proc.stdout) if proc.stdout.strip() else {}

    def read(path: Path) -> dict:
        return json.loads(path.read_text())

    for doc in sorted((root / "data").glob("arch/*.json")) + sorted((root / "data").glob("backbones/*.json")):
        validate("network.schema.json", read(doc), doc.name)
    validate("mcu_profiles.schema.json", read(root / "data" / "mcu_profiles.json"), "mcu_profiles.json")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        hw = tmp / "hw.json"
        run("calibrate", "--csv", str(root / "data/measurements/synthetic.csv"), "--out", str(hw))
        if hw.exists():
            validate("hw_models.schema.json", read(hw), "calibrate")
            validate("manifest.schema.json", read(Path(str(hw) + ".manifest.json")), "calibrate manifest")

        for arch in sorted((root / "data/arch").glob("*.json")):
            for bits in ("8", "4"):
                out = run("estimate", "--arch", str(arch), "--mcu", "stm32f746zg", "--bits", bits)
                validate("estimate.schema.json", out, f"estimate {arch.name} {bits}-bit")
        out = run("estimate", "--arch", str(root / "data/arch/micronet_kws_m.json"), "--hw-model", str(hw),
                  "--mcu", "sim-m7", "--budget-ops", "10M")
        validate("estimate.schema.json", out, "estimate with hardware model")

        task = tmp / "task.json"
        task.write_text(json.dumps({"task": {"kind": "spectrogram", "samples_per_class": 16,
                                             "shape": [16, 10, 1]}}))
        out = run("gen-data", "--config", str(task), "--seed", "4", "--out", str(tmp / "data"))
        validate("gen_data.schema.json", out, "gen-data")
        validate("manifest.schema.json", read(tmp / "data" / "manifest.json"), "gen-data manifest")

        search_cfg = tmp / "search.json"
        search_cfg.write_text(json.dumps({
            "backbone": str(root / "data/backbones/toy_spectrogram.json"),
            "data": str(tmp / "data"),
            "search": {"epochs": 2, "batch_size": 16, "lr_start": 0.2, "lambda_ops": 2.0},
            "finetune": {"epochs": 2, "batch_size": 16, "lr_start": 0.2},
            "ops_budget_fraction": 0.5,
        }))
        run("search", "--config", str(search_cfg), "--out", str(tmp / "search"))
        if (tmp / "search" / "search_result.json").exists():
            validate("search_result.schema.json", read(tmp / "search" / "search_result.json"), "search result")
            validate("network.schema.json", read(tmp / "search" / "architecture.json"), "searched architecture")
            validate("manifest.schema.json", read(tmp / "search" / "manifest.json"), "search manifest")

            train_cfg = tmp / "train.json"
            train_cfg.write_text(json.dumps({"data": str(tmp / "data"),
                                             "finetune": {"epochs": 2, "batch_size": 16, "lr_start": 0.2}}))
            out = run("train-eval", "--arch", str(tmp / "search" / "architecture.json"), "--config", str(train_cfg))
            validate("train_eval.schema.json", out, "train-eval")

        ad_cfg = tmp / "ad.json"
        ad_cfg.write_text(json.dumps({
            "task": {"kind": "anomaly", "train_per_id": 16, "test_normal_per_id": 6, "test_anomalous_per_id": 6},
            "finetune": {"epochs": 1, "batch_size": 16, "lr_start": 0.2},
        }))
        run("ad-eval", "--arch", str(root / "data/arch/ad_toy.json"), "--config", str(ad_cfg), "--out",
            str(tmp / "ad"))
        if (tmp / "ad" / "ad_result.json").exists():
            validate("ad_result.schema.json", read(tmp / "ad" / "ad_result.json"), "ad-eval")
            validate("manifest.schema.json", read(tmp / "ad" / "manifest.json"), "ad-eval manifest")
            out = run("ad-eval", "--csv", str(tmp / "ad" / "scores.csv"))
            validate("ad_result.schema.json", out, "ad-eval --csv")

    for f in failures:
        print("FAIL", f)
    print(f"{checked} documents checked, {len(failures)} problems")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
