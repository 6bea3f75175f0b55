import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the datagen helper


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
