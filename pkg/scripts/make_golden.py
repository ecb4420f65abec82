"""Regenerate the committed end-to-end fixtures under tests/golden/.

Runs the real command-line verbs on a development-size configuration and
freezes their outputs. Rerun this only when the bitstream layout, the
checkpoint layout, or the sampler changes on purpose; the acceptance suite
compares fresh runs against these bytes.
"""

import shutil
import sys
import tempfile
from pathlib import Path

from gicx.cli import main

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "tests" / "golden"

CONFIG_TEXT = """\
# frozen end-to-end fixture configuration
preset = toy
seed = 0
image_size = 16
dataset_count = 3
schedule_steps = 100
widths = 8,12,16
cond_dim = 16
cond_hidden = 24
embed_tokens = 4
train_steps = 120
inversion_steps = 25
sampler_steps = 6
"""


def run(argv):
    rc = main(argv)
    if rc != 0:
        raise SystemExit(f"command failed with exit {rc}: {argv}")


def build():
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    cfg = GOLDEN_DIR / "golden.cfg"
    cfg.write_text(CONFIG_TEXT)

    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "data"
        run(["gen-dataset", "--config", str(cfg), "--out", str(data)])
        first = sorted(data.glob("*.ppm"))[0]
        shutil.copyfile(first, GOLDEN_DIR / "input.ppm")

        run(["train", "--config", str(cfg), "--data", str(data),
             "--out", str(GOLDEN_DIR / "model.gckp")])

    run(["compress", "--config", str(cfg),
         "--ckpt", str(GOLDEN_DIR / "model.gckp"),
         "--image", str(GOLDEN_DIR / "input.ppm"),
         "--out", str(GOLDEN_DIR / "golden.gicx")])

    run(["decompress", "--config", str(cfg),
         "--ckpt", str(GOLDEN_DIR / "model.gckp"),
         "--input", str(GOLDEN_DIR / "golden.gicx"),
         "--out", str(GOLDEN_DIR / "golden.ppm")])

    for name in ("golden.cfg", "input.ppm", "model.gckp", "golden.gicx",
                 "golden.ppm"):
        path = GOLDEN_DIR / name
        print(f"{name}: {path.stat().st_size} bytes")


if __name__ == "__main__":
    sys.exit(build())
