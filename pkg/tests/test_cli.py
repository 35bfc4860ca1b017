"""Config loading, the run/sweep/audit commands, and output file contracts."""

import csv
from pathlib import Path

import pytest

from dbafl import aggregation as agg
from dbafl import cli
from dbafl import netsim as net
from dbafl import orchestrator as orch


def _write(tmp_path: Path, name: str, text: str) -> str:
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL_CONFIG = """\
duration_s: 40.0
metrics_interval_s: 5.0
train:
  epochs: 5
  learning_rate: 0.01
  batch_size: 100
data:
  samples_per_node: 100
"""

# independent oracle for the sampling instants: one row every interval from
# zero through the horizon, so 40 s at 5 s spacing gives exactly nine rows
ORACLE_GRID = [5.0 * i for i in range(9)]

HEADER = ("sim_time_s,avg_test_accuracy,global_objective,t_training,t_testing,"
          "t_communication,t_waiting,blocks_appended,current_leader,strategy,seed")


def _read_metrics(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ------------------------------------------------------------- load_scenario


def test_empty_config_gives_experiment_defaults(tmp_path):
    cfg = cli.load_scenario(_write(tmp_path, "empty.yaml", ""))
    assert len(cfg.nodes) == 5
    roles = [n.role for n in cfg.nodes]
    assert roles.count(orch.Role.RSU) == 3 and roles.count(orch.Role.BUS) == 2
    assert {n.compute_time_multiplier for n in cfg.nodes if n.role is orch.Role.BUS} == {4.0}
    assert cfg.strategy == orch.Strategy.dbafl()
    assert cfg.train.epochs == 50
    assert cfg.train.learning_rate == 0.01
    assert cfg.train.batch_size == 1500
    assert cfg.chain_policy.max_wait_s == 2.0
    assert cfg.chain_policy.max_records == 10
    assert cfg.chain_policy.max_block_bytes == 10_000_000
    assert cfg.term_blocks == 10
    assert cfg.payload.model_bits == 8e7
    assert cfg.attack == orch.AttackConfig.none()
    assert cfg.duration_s == 600.0


def test_zero_nodes_rejected_naming_the_field(tmp_path):
    path = _write(tmp_path, "bad.yaml", "nodes: []\n")
    with pytest.raises(ValueError, match="nodes"):
        cli.load_scenario(path)


def test_static_eps_strategy_from_config(tmp_path):
    for eps in (0.5, 1.0, 1.5):
        path = _write(tmp_path, "eps.yaml", f"strategy: StaticEps:{eps}\n")
        assert cli.load_scenario(path) == orch.default_scenario(
            orch.Strategy.static_eps(eps))


def test_unknown_field_is_named(tmp_path):
    with pytest.raises(ValueError, match="bogus"):
        cli.load_scenario(_write(tmp_path, "unk.yaml", "bogus: 3\n"))
    with pytest.raises(ValueError, match="frobnicate"):
        cli.load_scenario(_write(tmp_path, "unk2.yaml",
                                 "train:\n  frobnicate: 1\n"))


def test_non_mapping_config_rejected(tmp_path):
    with pytest.raises(ValueError, match="mapping"):
        cli.load_scenario(_write(tmp_path, "list.yaml", "- 1\n- 2\n"))


def test_round_trip_preserves_every_field(tmp_path):
    samples = [
        orch.default_scenario(orch.Strategy.dbafl()),
        orch.default_scenario(orch.Strategy.static_eps(1.5), master_seed=7,
                              duration_s=120.0, metrics_interval_s=2.5,
                              term_blocks=3),
        orch.default_scenario(
            orch.Strategy.afl(),
            attack=orch.AttackConfig(
                poisoners=frozenset({4}), poison_magnitude=12.5,
                ddos=net.DdosConfig(0.8, 1),
                defense=agg.DefensePolicy.threshold(0.9))),
        orch.default_scenario(
            orch.Strategy.fedavg(),
            nodes=(orch.NodeConfig(0, orch.Role.RSU),
                   orch.NodeConfig(7, orch.Role.BUS, 6.0,
                                   link=net.LinkParams(1e7, 9.5, 2e9))),
            data=orch.DataSpec(200, 3, 4, 2.0, 0.25),
            train=orch.TrainConfig(5, 0.1, 64),
            chain_policy=orch.BlockCutPolicy(1.0, 4, 1_000_000),
            payload=net.PayloadSizes(1e6, 128, 4000)),
        orch.default_scenario(orch.Strategy.local_only(),
                              nodes=(orch.NodeConfig(3, orch.Role.BUS, 2.0),)),
    ]
    for i, cfg in enumerate(samples):
        path = tmp_path / f"rt{i}.yaml"
        path.write_text(cli.serialize_scenario(cfg))
        assert cli.load_scenario(str(path)) == cfg


def test_manifest_requires_seeds(tmp_path):
    with pytest.raises(ValueError, match="seed"):
        cli.RunManifest(scenario="x.yaml", out_dir=str(tmp_path), seeds=())


# ----------------------------------------------------------------------- run


def test_run_writes_metrics_on_the_sampling_grid(tmp_path, capsys):
    cfg_path = _write(tmp_path, "small.yaml", SMALL_CONFIG)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg_path, "--out", str(out)]) == 0
    metrics = out / "metrics_DBAFL_1.csv"
    chain = out / "chain_DBAFL_1.txt"
    assert metrics.exists() and chain.exists()
    header, rows = _read_metrics(metrics)
    assert ",".join(header) == HEADER
    assert [float(r[0]) for r in rows] == ORACLE_GRID
    times = [float(r[0]) for r in rows]
    assert all(b > a for a, b in zip(times, times[1:]))
    assert all(r[-2] == "DBAFL" and r[-1] == "1" for r in rows)


def test_run_two_seeds_writes_two_files(tmp_path):
    cfg_path = _write(tmp_path, "small.yaml", SMALL_CONFIG)
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", cfg_path, "--out", str(out),
                   "--seed", "1", "--seed", "2"])
    assert rc == 0
    assert (out / "metrics_DBAFL_1.csv").exists()
    assert (out / "metrics_DBAFL_2.csv").exists()
    a = (out / "metrics_DBAFL_1.csv").read_bytes()
    b = (out / "metrics_DBAFL_2.csv").read_bytes()
    assert a != b  # seeds change data, so the trajectories differ


def test_rerun_is_byte_identical(tmp_path):
    cfg_path = _write(tmp_path, "small.yaml", SMALL_CONFIG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert cli.main(["run", "--config", cfg_path, "--out", str(out),
                         "--seed", "5"]) == 0
    for name in ("metrics_DBAFL_5.csv", "chain_DBAFL_5.txt"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_run_strategy_and_attack_overrides(tmp_path):
    cfg_path = _write(tmp_path, "small.yaml", SMALL_CONFIG)
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", cfg_path, "--out", str(out),
                   "--strategy", "StaticEps:1.0", "--attack", "ddos:0.8",
                   "--defense", "0.9"])
    assert rc == 0
    assert (out / "metrics_StaticEps-1.0_1.csv").exists()
    assert (out / "chain_StaticEps-1.0_1.txt").exists()


def test_override_parsing():
    base = orch.default_scenario(orch.Strategy.dbafl())
    poisoned = cli.apply_overrides(base, attack="poisoning")
    assert poisoned.attack.poisoners == {4}  # highest id plays the adversary
    assert poisoned.attack.poison_magnitude == 10.0
    flooded = cli.apply_overrides(base, attack="ddos:0.8")
    assert flooded.attack.ddos == net.DdosConfig(0.8, 1)
    defended = cli.apply_overrides(base, defense=0.9)
    assert defended.attack.defense == agg.DefensePolicy.threshold(0.9)
    with pytest.raises(ValueError, match="attack"):
        cli.apply_overrides(base, attack="meteor")
    with pytest.raises(ValueError):
        cli.apply_overrides(base, attack="ddos:1.5")


def test_run_missing_config_is_a_config_error(tmp_path):
    rc = cli.main(["run", "--config", str(tmp_path / "nope.yaml"),
                   "--out", str(tmp_path / "out")])
    assert rc == 1


def test_run_bad_strategy_is_a_config_error(tmp_path):
    cfg_path = _write(tmp_path, "small.yaml", SMALL_CONFIG)
    rc = cli.main(["run", "--config", cfg_path, "--out", str(tmp_path / "o"),
                   "--strategy", "Gossip"])
    assert rc == 1


def test_runtime_failure_exits_2_and_leaves_no_partial_files(tmp_path):
    # a bus with zero SNR has no uplink, which surfaces mid-simulation
    text = SMALL_CONFIG + (
        "nodes:\n"
        "  - {id: 0, role: RSU}\n"
        "  - id: 1\n"
        "    role: Bus\n"
        "    compute_time_multiplier: 4.0\n"
        "    link: {mobile_bandwidth_hz: 2.0e7, mobile_snr: 0.0,"
        " ethernet_rate_bps: 1.0e9}\n")
    cfg_path = _write(tmp_path, "dead.yaml", text)
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", cfg_path, "--out", str(out)])
    assert rc == 2
    assert list(out.iterdir()) == []


# --------------------------------------------------------------------- sweep


def test_sweep_strategies_share_the_time_grid(tmp_path):
    cfg_path = _write(tmp_path, "small.yaml", SMALL_CONFIG)
    out = tmp_path / "out"
    rc = cli.main(["sweep", "--config", cfg_path, "--out", str(out),
                   "--strategies", "DBAFL,FedAVG,LocalOnly", "--seeds", "3"])
    assert rc == 0
    grids = {}
    for label in ("DBAFL", "FedAVG", "LocalOnly"):
        header, rows = _read_metrics(out / f"metrics_{label}_3.csv")
        assert ",".join(header) == HEADER
        grids[label] = [float(r[0]) for r in rows]
    assert grids["DBAFL"] == grids["FedAVG"] == grids["LocalOnly"] == ORACLE_GRID
    assert (out / "chain_DBAFL_3.txt").exists()
    assert not (out / "chain_FedAVG_3.txt").exists()
    assert not (out / "chain_LocalOnly_3.txt").exists()


def test_sweep_seed_ranges(tmp_path):
    assert cli.parse_seed_range("1-3") == (1, 2, 3)
    assert cli.parse_seed_range("7") == (7,)
    assert cli.parse_seed_range("2,5,9") == (2, 5, 9)
    with pytest.raises(ValueError):
        cli.parse_seed_range("5-1")
    with pytest.raises(ValueError):
        cli.parse_seed_range("")


# --------------------------------------------------------------------- audit


def _run_small(tmp_path) -> Path:
    cfg_path = _write(tmp_path, "small.yaml", SMALL_CONFIG)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", cfg_path, "--out", str(out)]) == 0
    return out / "chain_DBAFL_1.txt"


def test_audit_accepts_untouched_dump(tmp_path, capsys):
    dump = _run_small(tmp_path)
    assert cli.main(["audit", "--chain", str(dump)]) == 0
    assert "Ok" in capsys.readouterr().out


def test_audit_flags_single_hex_digit_tamper(tmp_path, capsys):
    dump = _run_small(tmp_path)
    lines = dump.read_text().splitlines()
    assert len(lines) >= 2
    target = 1
    parts = lines[target].split("|")
    recs = parts[3]
    digest_start = recs.rindex(",") + 1
    flipped = "0" if recs[digest_start] != "0" else "f"
    parts[3] = recs[:digest_start] + flipped + recs[digest_start + 1:]
    lines[target] = "|".join(parts)
    tampered = tmp_path / "tampered.txt"
    tampered.write_text("\n".join(lines) + "\n")
    assert cli.main(["audit", "--chain", str(tampered)]) == 3
    assert f"FirstBadBlock({target})" in capsys.readouterr().out


def test_audit_rejects_truncated_dump(tmp_path, capsys):
    dump = _run_small(tmp_path)
    text = dump.read_text().rstrip("\n")
    truncated = tmp_path / "cut.txt"
    truncated.write_text(text[:-10])
    assert cli.main(["audit", "--chain", str(truncated)]) == 3
    err = capsys.readouterr()
    assert "format" in (err.out + err.err).lower()


def test_audit_missing_file_is_a_config_error(tmp_path):
    assert cli.main(["audit", "--chain", str(tmp_path / "absent.txt")]) == 1
