import os
import sys
from pathlib import Path

# Tests import sibling helper modules (oracles, gradcheck) directly.
sys.path.insert(0, str(Path(__file__).resolve().parent))

# Rendering tests must never require a display.
os.environ.setdefault("MPLBACKEND", "Agg")
