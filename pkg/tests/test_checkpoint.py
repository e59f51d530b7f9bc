import pytest
import torch

from flashsplit.checkpoint import MAGIC, read_checkpoint, save_checkpoint
from flashsplit.codec import Codec, CodecConfig, CrossDecoder
from flashsplit.denoiser import DenoiserConfig, DualDenoiser
from flashsplit.errors import ConfigError, DatasetLoadError, MissingCheckpointError, ModeMismatchError
from flashsplit.pipeline import (load_codec, load_decoders, load_denoiser, load_pipeline, save_codec, save_decoders,
                                 save_denoiser)


def test_round_trip_tensors(tmp_path):
    state = {"a": torch.randn(3, 4), "b": torch.arange(5), "c": torch.randn(2, dtype=torch.float64)}
    sha = save_checkpoint(tmp_path / "x.ckpt", "test", {"k": 1}, state, "linear", {"m": 2})
    header, back = read_checkpoint(tmp_path / "x.ckpt")
    assert header["kind"] == "test" and header["config"] == {"k": 1} and header["meta"] == {"m": 2}
    for k in state:
        assert torch.equal(state[k], back[k]) and state[k].dtype == back[k].dtype
    assert len(sha) == 64
    assert (tmp_path / "x.ckpt").read_bytes()[:8] == MAGIC


def test_deterministic_bytes(tmp_path):
    torch.manual_seed(0)
    m = Codec(CodecConfig(widths=(8, 16, 16)))
    save_codec(tmp_path / "a.ckpt", m)
    save_codec(tmp_path / "b.ckpt", m)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_errors(tmp_path):
    with pytest.raises(MissingCheckpointError):
        read_checkpoint(tmp_path / "missing.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"garbage!" * 4)
    with pytest.raises(DatasetLoadError):
        read_checkpoint(tmp_path / "junk.ckpt")


def test_model_round_trips(tmp_path):
    codec = Codec(CodecConfig(widths=(8, 16, 16)))
    codec.lat_std.fill_(2.0)
    save_codec(tmp_path / "codec.ckpt", codec)
    c2, h = load_codec(tmp_path / "codec.ckpt")
    assert c2.trained and h["mode"] == "linear" and torch.equal(c2.lat_std, codec.lat_std)
    den = DualDenoiser(DenoiserConfig(width=8))
    den.single_image = True
    save_denoiser(tmp_path / "s1.ckpt", den, "linear")
    d2, _ = load_denoiser(tmp_path / "s1.ckpt")
    assert d2.single_image and d2.trained and d2.schedule.T_steps == 1000
    decs = {"T": CrossDecoder(codec), "R": CrossDecoder(codec)}
    save_decoders(tmp_path / "s2.ckpt", decs, "linear")
    back, _ = load_decoders(tmp_path / "s2.ckpt", c2)
    for b in "TR":
        for k, v in decs[b].state_dict().items():
            assert torch.equal(v, back[b].state_dict()[k])
    with pytest.raises(ConfigError):
        load_denoiser(tmp_path / "codec.ckpt")


def test_pipeline_mode_mismatch(tmp_path):
    codec = Codec(CodecConfig(widths=(8, 16, 16)))
    save_codec(tmp_path / "codec.ckpt", codec)
    save_denoiser(tmp_path / "s1.ckpt", DualDenoiser(DenoiserConfig(width=8)), "tonemapped")
    with pytest.raises(ModeMismatchError):
        load_pipeline(tmp_path / "codec.ckpt", tmp_path / "s1.ckpt")
    with pytest.raises(MissingCheckpointError):
        load_pipeline(tmp_path / "codec.ckpt", require=("codec", "stage1"))
