"""End-to-end smoke run: synth -> train -> run -> eval in a temporary directory."""
import sys
import tempfile
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cli import main as driftwatch

SMOKE_CONFIG = """\
# small and fast; not the published defaults
scd_epochs = 20
iec_epochs = 15
dsd_epochs = 15
update_epochs = 3
window_size = 128
"""


def main():
    """Run every subcommand once and stop at the first failure."""
    print("Running driftwatch smoke pipeline...")
    print("=" * 60)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        config = tmp / "smoke.conf"
        config.write_text(SMOKE_CONFIG, encoding="utf-8")
        stream, bundle, verdicts = tmp / "s.csv", tmp / "bundle", tmp / "verdicts.ndjson"
        run_args = ["--config", str(config), "--bundle", str(bundle), "--data", str(stream), "-o", str(verdicts)]
        steps = [
            ("synth", ["synth", "--kind", "abrupt", "--n", "5000", "--seed", "7", "-o", str(stream)]),
            ("train", ["train", "--config", str(config), "--data", str(stream), "-o", str(bundle)]),
            ("run", ["run", *run_args]),
            ("eval", ["eval", "--verdicts", str(verdicts), "--data", str(stream), "--window", "200"]),
        ]
        for number, (name, argv) in enumerate(steps, start=1):
            print(f"\n{number}. {name}")
            code = driftwatch(argv)
            if code != 0:
                print(f"   ✗ {name} exited with {code}")
                sys.exit(code)
            print(f"   ✓ {name} done")
    print("\n✓ Smoke pipeline completed successfully!")


if __name__ == "__main__":
    main()
