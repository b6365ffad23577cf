import pytest

from codedserve.cli import build_parser, main


def test_every_subcommand_has_seed():
    parser = build_parser()
    for cmd, extra in [("train-deployed", ["--model-dir", "x"]), ("train-parity", ["--model-dir", "x"]),
                       ("evaluate-accuracy", []), ("serve", ["--model", "m"]),
                       ("worker", ["--model", "m", "--connect", "h:1"]), ("bench", ["--model-dir", "x"]),
                       ("report", ["r.txt"])]:
        assert parser.parse_args([cmd, *extra, "--seed", "7"]).seed == 7


def test_pipeline(tmp_path, capsys):
    d = str(tmp_path / "models")
    main(["train-deployed", "--model-dir", d, "--epochs", "2"])
    main(["train-parity", "--model-dir", d, "--k", "2", "--epochs", "2", "--repeats", "1"])
    out = capsys.readouterr().out
    assert "deployed [64, 256, 128, 10]" in out and "parity k=2" in out
    main(["bench", "--model-dir", d, "--n", "1000", "--slowdown-p", "0.05", "--slowdown-ms", "50",
          "--out", str(tmp_path / "rep")])
    out = capsys.readouterr().out
    for mode in ("parm", "equal_resources", "default_only", "approx_backup"):
        assert f"mode: {mode}" in out
    main(["report", str(tmp_path / "rep" / "report_parm.txt"), str(tmp_path / "rep" / "report_equal_resources.txt")])
    assert "tail-gap ratio" in capsys.readouterr().out


def test_bench_config_file(tmp_path, capsys):
    d = str(tmp_path / "models")
    main(["train-deployed", "--model-dir", d, "--epochs", "1", "--no-backup"])
    main(["train-parity", "--model-dir", d, "--k", "3", "--epochs", "0"])
    cfg = tmp_path / "serve.cfg"
    cfg.write_text("k=3\nslowdown_p=0.1\nslowdown_ms=30\n")
    capsys.readouterr()
    main(["bench", "--model-dir", d, "--mode", "parm", "--config", str(cfg), "--n", "600"])
    assert "queries: 600" in capsys.readouterr().out


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["fly"])
