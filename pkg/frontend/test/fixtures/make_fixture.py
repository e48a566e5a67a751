"""Build the e2e fixture: a disconnected phantom plus its corrective text.

Usage: python3 make_fixture.py OUT_DIR
Writes gt/cor rawl pairs, the centerline file, and meta.json with the
bridge instruction that repairs the cut.
"""

import json
import sys
from pathlib import Path

import numpy as np

from vesselforge.corruption import CorruptionConfig, apply_error, sample_error
from vesselforge.instruction import render_instruction
from vesselforge.phantoms import make_phantom
from vesselforge.volume import save_volume


def main() -> None:
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    vol, c = make_phantom("straight")
    rec = sample_error(np.random.default_rng(11), 7,
                       CorruptionConfig(kinds=["Disconnect"]))
    corrupted = apply_error(vol, c, rec)
    save_volume(vol, out / "gt.rawl.json")
    save_volume(corrupted, out / "cor.rawl.json")
    (out / "cl.json").write_text(json.dumps({"7": json.loads(c.to_json())}))
    doc = render_instruction(rec, label_map=vol.label_map)
    (out / "meta.json").write_text(json.dumps({"instruction": doc.detailed}))


if __name__ == "__main__":
    main()
