import sys
from pathlib import Path

# shared non-test helpers (gradcheck) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))
