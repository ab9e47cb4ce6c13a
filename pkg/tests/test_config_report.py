from fractions import Fraction

import pytest

from fase.config import ConfigError, RunConfig
from fase.report import ReportError, RunReport, compare, load, parse_kv, traffic_table


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nprogram = /bin/x\ncores = 4\nhfutex = off\nargs = a 'b c'\n"
                 "baud = 0x1000\nlatency_us = 2.5\n")
    cfg = RunConfig.from_file(str(p), cores=2, mode=None)
    assert cfg.cores == 2 and cfg.hfutex is False and cfg.args == ["a", "b c"]
    assert cfg.baud == 4096 and cfg.mode == "htp"
    assert cfg.channel().latency_extra == Fraction(25, 10 ** 7)


@pytest.mark.parametrize("text, msg", [
    ("nonsense", "expected key"),
    ("colour = red", "unknown config key"),
    ("cores = many", "bad value"),
])
def test_config_errors(tmp_path, text, msg):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError, match=msg):
        RunConfig.from_file(str(p))


@pytest.mark.parametrize("kw", [
    dict(program=""), dict(cores=0), dict(mode="fast"), dict(backend="socket"),
    dict(baud=-1), dict(frame="9Z1"), dict(mask_size=0),
])
def test_validate(kw):
    base = dict(program="/bin/x")
    base.update(kw)
    with pytest.raises(ConfigError):
        RunConfig(**base).validate()


def sample(**kw):
    r = RunReport(program="p", cores=2, baud=921600, frame="8N2", exit_code=0, ticks=100,
                  sim_seconds=0.5, uticks=[40, 60], bytes_sent=70, bytes_received=30,
                  bytes_by_opcode={"NEXT": 21, "REG_READ": 79}, frames_by_opcode={"NEXT": 1, "REG_READ": 6},
                  bytes_by_attribution={"loader": 80, "idle": 20}, syscalls={"write": 1})
    for k, v in kw.items():
        setattr(r, k, v)
    return r


def test_report_kv_roundtrip(tmp_path):
    r = sample()
    text = r.to_kv()
    assert text.startswith("# fase-report v1\n")
    d = parse_kv(text)
    assert d["bytes.total"] == 100 and d["utick.1"] == 60 and d["sim_seconds"] == 0.5
    assert d["syscall.write"] == 1 and d["killed_by"] == ""
    p = tmp_path / "r.kv"
    p.write_text(text)
    assert load(str(p)) == d


def test_report_is_deterministic():
    assert sample().to_kv() == sample().to_kv()


def test_parse_rejects_missing_header():
    with pytest.raises(ReportError):
        parse_kv("bytes.total=1\n")


def test_compare():
    a, b = parse_kv(sample().to_kv()), parse_kv(sample(bytes_sent=120).to_kv())
    assert compare(a, b, "bytes.total") == pytest.approx(0.5)
    with pytest.raises(ReportError, match="missing"):
        compare(a, b, "nope")
    with pytest.raises(ReportError, match="zero"):
        compare(parse_kv(sample(exit_code=0, bytes_sent=0, bytes_received=0).to_kv()), b, "bytes.total")
    with pytest.raises(ReportError, match="numeric"):
        compare(a, b, "program")


def test_traffic_table():
    d = parse_kv(sample().to_kv())
    text = traffic_table(d, "opcode")
    lines = text.splitlines()
    assert lines[1].startswith("REG_READ") and "6 frames" in lines[1]
    assert lines[-1].split() == ["total", "100"]
    assert "loader" in traffic_table(d, "attribution")
    with pytest.raises(ReportError):
        traffic_table(d, "colour")


def test_text_summary():
    assert "killed by signal 11" in sample(killed_by=11).to_text()
