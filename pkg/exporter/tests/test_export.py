import json

import numpy as np
import pytest
import torch

from sgl_export import ExportError, ExportSpec, export_checkpoint, export_predictions
from sgl_export.cli import dispatch


def _toy_state_dict():
    g = torch.Generator().manual_seed(99)
    return {
        "enc.conv.weight": torch.randn(4, 3, 3, 3, generator=g),
        "enc.conv.bias": torch.randn(4, generator=g),
        "enc.bn.running_mean": torch.randn(4, generator=g, dtype=torch.float64),
        "enc.bn.num_batches_tracked": torch.tensor(17, dtype=torch.int64),
        "dec.head.weight": torch.randn(2, 4, generator=g),
        "dec.head.bias": torch.randn(2, generator=g),
    }


def _spec(tmp_path, **kwargs):
    base = dict(
        source=tmp_path / "ckpt.pt",
        output=tmp_path / "model.sgl",
        model_id="toy",
        iteration=1200,
        hyperparam_id="h0",
        encoder_prefixes=["enc."],
        decoder_prefixes=["dec."],
        exclude=["*num_batches_tracked"],
    )
    base.update(kwargs)
    return ExportSpec(**base)


@pytest.fixture
def checkpoint(tmp_path):
    torch.save(_toy_state_dict(), tmp_path / "ckpt.pt")
    return tmp_path / "ckpt.pt"


def test_export_is_deterministic(tmp_path, checkpoint):
    a = export_checkpoint(_spec(tmp_path, output=tmp_path / "a.sgl"))
    b = export_checkpoint(_spec(tmp_path, output=tmp_path / "b.sgl"))
    assert a.read_bytes() == b.read_bytes()


def test_excluded_buffers_listed_in_metadata(tmp_path, checkpoint):
    import struct

    path = export_checkpoint(_spec(tmp_path))
    blob = path.read_bytes()
    (manifest_len,) = struct.unpack_from("<Q", blob, 6)
    manifest = json.loads(blob[14 : 14 + manifest_len])
    assert manifest["metadata"]["excluded_buffers"] == ["enc.bn.num_batches_tracked"]
    assert "enc.bn.num_batches_tracked" not in manifest["tensors"]
    assert len(manifest["tensors"]) == 5


def test_unexcluded_non_float_rejected(tmp_path, checkpoint):
    with pytest.raises(ExportError, match="num_batches_tracked"):
        export_checkpoint(_spec(tmp_path, exclude=[]))


def test_overlapping_prefixes_rejected(tmp_path, checkpoint):
    with pytest.raises(ExportError, match="enc.conv.weight"):
        export_checkpoint(_spec(tmp_path, decoder_prefixes=["dec.", "enc.conv."]))


def test_wrapped_state_dict_accepted(tmp_path):
    torch.save({"state_dict": _toy_state_dict()}, tmp_path / "ckpt.pt")
    export_checkpoint(_spec(tmp_path))


def test_prediction_quantization_values(tmp_path):
    in_dir = tmp_path / "npy"
    in_dir.mkdir()
    np.save(in_dir / "img.EX.npy", np.array([[0.5, 1.0], [0.0, 0.25]]))
    export_predictions(in_dir, tmp_path / "png")
    from PIL import Image

    raw = np.asarray(Image.open(tmp_path / "png" / "img.EX.prob.png"), dtype=np.uint16)
    assert raw[0, 0] == 32768  # round(0.5 * 65535)
    assert raw[0, 1] == 65535
    assert raw[1, 0] == 0


def test_out_of_range_predictions_clamped_with_count(tmp_path):
    in_dir = tmp_path / "npy"
    in_dir.mkdir()
    np.save(in_dir / "img.EX.npy", np.array([[-0.2, 0.5], [1.4, 1.0]]))
    fragment_path = export_predictions(in_dir, tmp_path / "png")
    fragment = json.loads(fragment_path.read_text())
    assert fragment["clamped_pixels"] == 2
    from PIL import Image

    raw = np.asarray(Image.open(tmp_path / "png" / "img.EX.prob.png"), dtype=np.uint16)
    assert raw[0, 0] == 0 and raw[1, 0] == 65535


def test_cli_checkpoint_and_preds(tmp_path, checkpoint, capsys):
    out = tmp_path / "cli.sgl"
    code = dispatch([
        "checkpoint", "--in", str(checkpoint), "--out", str(out),
        "--model-id", "toy", "--prefix-encoder", "enc.", "--prefix-decoder", "dec.",
        "--exclude", "*num_batches_tracked",
    ])
    assert code == 0 and out.exists()

    in_dir = tmp_path / "npy"
    in_dir.mkdir()
    np.save(in_dir / "a.MA.npy", np.random.default_rng(0).random((8, 8)))
    assert dispatch(["preds", "--in", str(in_dir), "--out", str(tmp_path / "png")]) == 0
    assert (tmp_path / "png" / "a.MA.prob.png").exists()


def test_cli_bad_checkpoint_exits_2(tmp_path):
    bad = tmp_path / "garbage.pt"
    bad.write_bytes(b"not a checkpoint")
    assert dispatch(["checkpoint", "--in", str(bad), "--out", str(tmp_path / "o.sgl"),
                     "--model-id", "x"]) == 2


def test_cli_unknown_flag_exits_1():
    assert dispatch(["checkpoint", "--bogus"]) == 1
