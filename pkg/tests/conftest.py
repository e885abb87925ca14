import pytest

from memestream.cluster import Params
from memestream.ingest import SYNTH_EPOCH, StepStream, SynthConfig, synth_stream


@pytest.fixture(scope="session")
def small_synth():
    """2,000 tweets over 10 planted memes, 20 steps of 30 s."""
    cfg = SynthConfig(num_memes=10, tweets_total=2000, duration=600, seed=7)
    tweets, cover = synth_stream(cfg)
    return tweets, cover


@pytest.fixture(scope="session")
def small_batches(small_synth):
    tweets, _ = small_synth
    return list(StepStream(tweets, 30, SYNTH_EPOCH))


@pytest.fixture(scope="session")
def small_params():
    return Params(k=8, step_len=30, window_steps=6, nsigma=2.0, seed=3)


@pytest.fixture(scope="session")
def medium_synth():
    """6,000 tweets over 20 memes, 50 steps of 30 s."""
    cfg = SynthConfig(num_memes=20, tweets_total=6000, duration=1500, seed=11)
    tweets, cover = synth_stream(cfg)
    return tweets, cover


@pytest.fixture(scope="session")
def medium_batches(medium_synth):
    tweets, _ = medium_synth
    return list(StepStream(tweets, 30, SYNTH_EPOCH))
