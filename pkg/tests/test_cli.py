import shutil

import pytest

from igs.cli import build_parser, main, parse_frames

SPEC = """seed: 5
gaussian_count: 60
width: 32
height: 32
views: 2
frames: 11
"""


def _kv(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line and " " not in line)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scene.yaml").write_text(SPEC)
    assert main(["synth", str(root / "scene.yaml"), "--out", str(root / "data")]) == 0
    return root


def test_help_lists_every_flag(capsys):
    for cmd in ("init", "stream", "render", "eval", "synth", "inspect"):
        with pytest.raises(SystemExit):
            main([cmd, "--help"])
        text = capsys.readouterr().out
        for flag in ("--config", "--preset", "--seed", "--frames", "--views", "--out"):
            assert flag in text, (cmd, flag)
    with pytest.raises(SystemExit):
        main(["--help"])
    assert "IGS_THREADS" in capsys.readouterr().out


def test_frames_parser():
    assert parse_frames("2..7") == (2, 7) and parse_frames("4") == (4, 4) and parse_frames(None) is None
    with pytest.raises(Exception):
        parse_frames("7..2")


def test_synth_layout(dataset):
    data = dataset / "data"
    for name in ("cameras.json", "frame0.ply", "weights.igsw", "config.yaml", "frame_0010_view_01.igsi",
                 "flow_0010.igsf", "heldout_0000.igsi"):
        assert (data / name).is_file(), name


def test_init_and_inspect(dataset, capsys, tmp_path):
    out = tmp_path / "one.igss"
    assert main(["init", str(dataset / "data" / "frame0.ply"), "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["inspect", str(out)]) == 0
    text = capsys.readouterr().out
    rows = [l for l in text.splitlines() if l.startswith("chunk ")]
    assert rows == [rows[0]] and "frame=0 kind=KEY" in rows[0]
    assert _kv(text)["frame_count"] == "1"


def test_stream_render_eval(dataset, capsys, tmp_path):
    data = dataset / "data"
    out = tmp_path / "run.igss"
    assert main(["stream", str(data / "frame0.ply"), str(data), "--out", str(out), "--preset", "igs-s"]) == 0
    rep = _kv(capsys.readouterr().out)
    assert rep["refinements"] == "2" and rep["candidates"] == "8" and rep["refined_keyframes"] == "5,10"

    again = tmp_path / "again.igss"
    assert main(["stream", str(data / "frame0.ply"), str(data), "--out", str(again), "--preset", "igs-s"]) == 0
    assert out.read_bytes() == again.read_bytes()
    capsys.readouterr()

    rend = tmp_path / "rend"
    assert main(["render", str(out), str(data), "--out", str(rend), "--frames", "0..10"]) == 0
    shutil.copy(data / "cameras.json", rend / "cameras.json")
    capsys.readouterr()
    assert main(["eval", str(out), str(rend), "--report", str(tmp_path / "r.txt")]) == 0
    rep = _kv(capsys.readouterr().out)
    assert all(float(rep[f"frame_{t:04d}_psnr"]) == 100.0 for t in range(11))
    assert (tmp_path / "r.txt").read_text().startswith("frames=11")

    assert main(["eval", str(out), str(data), "--heldout"]) == 0
    rep = _kv(capsys.readouterr().out)
    assert float(rep["psnr_mean"]) > 30


def test_errors_are_single_line(dataset, capsys, tmp_path):
    assert main(["inspect", str(tmp_path / "missing.igss")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: code=not_found message=")
    bad = tmp_path / "bad.igss"
    bad.write_bytes(b"NOPE" + bytes(16))
    assert main(["inspect", str(bad)]) == 1
    assert "code=bad_magic" in capsys.readouterr().err
    assert main(["render", str(bad), str(dataset / "data"), "--out", str(tmp_path / "x"), "--frames", "3..1"]) == 1
    assert "code=bad_frames" in capsys.readouterr().err


def test_thread_cap_env(dataset, capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("IGS_THREADS", "zero")
    assert main(["inspect", str(tmp_path / "x.igss")]) == 1
    assert "code=bad_env" in capsys.readouterr().err
    monkeypatch.setenv("IGS_THREADS", "1")
    out = tmp_path / "one.igss"
    assert main(["init", str(dataset / "data" / "frame0.ply"), "--out", str(out)]) == 0


def test_parser_requires_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
