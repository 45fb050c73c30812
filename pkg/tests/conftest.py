import sys
from pathlib import Path

import numpy as np
import pytest

from cdkit import TableScorer, Vocabulary

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"


@pytest.fixture
def tiny_vocab():
    return Vocabulary(id="tiny-v1", tokens=("<s>", "</s>", "a", "b", "c"), bos_id=0, eos_id=1)


def table_from_probs(vocab, probs_by_context, default=None):
    """TableScorer builder taking {context: {token: prob}} dicts."""
    return TableScorer(vocab, rules=probs_by_context, default=default)


def random_logit_pair(rng, size):
    """One random (expert, amateur) logit pair, spread enough to matter."""
    expert = rng.normal(0.0, 3.0, size)
    amateur = rng.normal(0.0, 3.0, size)
    return expert, amateur


def adapter_command(script_name, *args):
    """Command line for a protocol adapter script bundled with the package."""
    path = SCRIPTS / script_name
    return [sys.executable, str(path), *[str(a) for a in args]]
