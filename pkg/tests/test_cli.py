import re
import socket
import subprocess
import sys
import time

import pytest

from tpmra import cli

CMD = [sys.executable, "-m", "tpmra.cli"]


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def two_party(*extra, timeout=60):
    addr = f"127.0.0.1:{free_port()}"
    server = subprocess.Popen(CMD + ["--mode", "exchange", "--listen", addr, "--weight-seed", "1", *extra],
                              stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    time.sleep(0.5)
    client = subprocess.run(CMD + ["--mode", "exchange", "--connect", addr, "--seed", "5eed", "--weight-seed", "2",
                                   *extra], capture_output=True, text=True, timeout=timeout)
    out, err = server.communicate(timeout=timeout)
    return (server.returncode, out, err), (client.returncode, client.stdout, client.stderr)


def fingerprints(text):
    return re.findall(r"(?:key=|\] id=\d+ )([0-9a-f]{16})", text)


def test_two_process_exchange():
    (rc_b, out_b, err_b), (rc_a, out_a, err_a) = two_party()
    assert rc_a == rc_b == 0, err_a + err_b
    assert fingerprints(out_a) == fingerprints(out_b) and len(fingerprints(out_a)) == 1
    assert "role=A" in out_a and "role=B" in out_b


def test_two_process_rekey():
    (rc_b, out_b, err_b), (rc_a, out_a, err_a) = two_party("--rekey", "5")
    assert rc_a == rc_b == 0, err_a + err_b
    fa, fb = fingerprints(out_a), fingerprints(out_b)
    assert fa == fb and len(fa) == 5 and len(set(fa)) == 5


def test_watchdog_exit_code():
    (rc_b, _, err_b), (rc_a, _, err_a) = two_party("--watchdog", "1")
    assert rc_a == rc_b == cli.EXIT_SYNC_ERROR
    assert "sync_error" in err_a


def test_connect_refused_exit_code(capsys):
    rc = cli.main(["--mode", "exchange", "--connect", f"127.0.0.1:{free_port()}", "--seed", "1", "--timeout", "2"])
    assert rc == cli.EXIT_TRANSPORT


@pytest.mark.parametrize("argv", [
    ["--mode", "exchange"],
    ["--mode", "exchange", "--connect", "127.0.0.1:1"],
    ["--mode", "exchange", "--connect", "127.0.0.1:1", "--seed", "1", "--b", "16"],
    ["--mode", "sync", "--trials", "0"],
    ["--mode", "sync", "--seed", "0"],
    ["--mode", "throughput", "--bandwidth-bps", "-5"],
])
def test_config_errors(argv, capsys):
    assert cli.main(argv) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_exit_codes_distinct():
    codes = {cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_SYNC_ERROR, cli.EXIT_TRANSPORT, cli.EXIT_PROTOCOL}
    assert len(codes) == 5


def test_sync_mode_writes_identical_csv(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert cli.main(["--mode", "sync", "--n", "20", "--trials", "10", "--seed", "abc", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "oracle sync" in capsys.readouterr().out


def test_throughput_mode(capsys):
    assert cli.main(["--mode", "throughput", "--bandwidth-bps", "400000", "--overhead-bits", "0"]) == 0
    assert "channel_limited=961.5" in capsys.readouterr().out
    assert cli.main(["--mode", "throughput"]) == 0
    assert "pci-32-33mhz" in capsys.readouterr().out


def test_scaling_and_attack_modes(capsys):
    with pytest.warns(RuntimeWarning):
        assert cli.main(["--mode", "scaling-N", "--trials", "3", "--n", "20"]) == 0
    assert "ratio_to_N100" in capsys.readouterr().out
    assert cli.main(["--mode", "attack", "--trials", "3", "--n", "20", "--strategy", "naive"]) == 0
    assert "naive" in capsys.readouterr().out
