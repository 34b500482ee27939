import csv
from importlib import resources

import numpy as np
import pytest
import yaml

from lanemerge.cli import main
from lanemerge.neural import save_params
from lanemerge.sac import make_policy
from lanemerge.sim import load_scenario, scenario_from_dict

TINY = dict(actor_hidden=[16, 16], critic_hidden=[16, 16], batch_size=16, warmup_steps=40,
            buffer_size=1000, checkpoint_every=1, eval_every=0, dtype="float64")


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def checkpoint(tmp_path):
    pol = make_policy(load_scenario("two_lane_3v"), (32,), np.random.default_rng(0))
    pol.params.flat[:] *= 0.6
    path = tmp_path / "actor.ckpt"
    save_params(pol.params, path)
    return str(path)


@pytest.fixture
def empty_road_file(tmp_path):
    raw = yaml.safe_load(resources.files("lanemerge.scenarios").joinpath("two_lane_3v.yaml").read_text())
    raw["agents"] = raw["agents"][:1]
    raw["road"] = {"lower": [[-100.0, -50.0], [500.0, -50.0]], "upper": [[-100.0, 50.0], [500.0, 50.0]]}
    path = tmp_path / "empty.yaml"
    path.write_text(yaml.safe_dump(raw))
    scenario_from_dict(raw)
    return str(path), raw


def test_train_zero_episodes_writes_initial_checkpoint(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--scenario", "two_lane_3v", "--episodes", "0", "--out", str(out)]) == 0
    assert (out / "actor.ckpt").stat().st_size > 0
    assert read_csv(out / "curve.csv") == []
    assert main(["eval", "--scenario", "two_lane_3v", "--checkpoint", str(out / "actor.ckpt"),
                 "--runs", "1"]) == 0


def test_train_same_seed_same_outputs(tmp_path, capsys):
    cfg = tmp_path / "sac.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["train", "--scenario", "two_lane_3v", "--sac-config", str(cfg), "--episodes", "3",
                     "--seed", "5", "--out", str(out), "--log-every", "1"]) == 0
        outs.append(out)
    for name in ("actor.ckpt", "curve.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = read_csv(outs[0] / "curve.csv")
    assert [int(r["episode"]) for r in rows] == [1, 2, 3]
    assert "episode 3 avg_reward" in capsys.readouterr().out


@pytest.mark.parametrize("content, field", [("gamma: 1.5\n", "gamma"), ("batch_size: many\n", "batch_size"),
                                            ("learning_rate: 0.1\n", "learning_rate")])
def test_train_rejects_invalid_config_with_field_name(tmp_path, capsys, content, field):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(content)
    rc = main(["train", "--scenario", "two_lane_3v", "--sac-config", str(cfg), "--episodes", "1",
               "--out", str(tmp_path / "o")])
    assert rc == 1
    assert field in capsys.readouterr().err


def test_invalid_scenario_and_usage_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "s.yaml"
    bad.write_text("agents: []\n")
    assert main(["eval", "--scenario", str(bad), "--checkpoint", "x"]) == 1
    assert "scenario" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--runs", "3"])
    assert exc.value.code == 1


def test_eval_single_run_is_deterministic(tmp_path, checkpoint):
    rows = []
    for i in range(2):
        out = tmp_path / f"e{i}.csv"
        assert main(["eval", "--scenario", "two_lane_3v", "--checkpoint", checkpoint, "--runs", "1",
                     "--seed", "7", "--out", str(out)]) == 0
        rows.append(read_csv(out))
    assert rows[0] == rows[1] and len(rows[0]) == 1
    assert rows[0][0]["scenario"] == "two_lane_3v" and rows[0][0]["runs"] == "1"
    assert 0.0 <= float(rows[0][0]["success_rate"]) <= 100.0


def test_eval_workers_do_not_change_results(tmp_path, checkpoint):
    texts = []
    for workers in ("1", "3"):
        out = tmp_path / f"w{workers}.csv"
        main(["eval", "--scenario", "two_lane_3v", "--checkpoint", checkpoint, "--runs", "6",
              "--workers", workers, "--out", str(out)])
        texts.append(out.read_text())
    assert texts[0] == texts[1]


def test_eval_rejects_incompatible_checkpoint(checkpoint, capsys):
    assert main(["eval", "--scenario", "highway_5v", "--checkpoint", checkpoint, "--runs", "1"]) == 1
    assert "observation" in capsys.readouterr().err


def test_plan_empty_road_writes_outputs_and_exits_clean(tmp_path, empty_road_file):
    path, raw = empty_road_file
    sc = scenario_from_dict(raw)
    pol = make_policy(sc, (32,), np.random.default_rng(3))
    pol.params.flat[:] *= 0.6
    ckpt = tmp_path / "p.ckpt"
    save_params(pol.params, ckpt)
    out = tmp_path / "plan"
    rc = main(["plan", "--scenario", path, "--checkpoint", str(ckpt), "--runs", "2", "--out", str(out),
               "--workers", "2"])
    assert rc == 0
    summary = read_csv(out / "summary.csv")
    assert [int(r["seed"]) for r in summary] == [0, 1]
    assert all(r["fallback_engaged"] == "false" and r["post_check_passed"] == "true" for r in summary)
    agg = {r["metric"]: float(r["value"]) for r in read_csv(out / "aggregate.csv")}
    assert agg["runs"] == 2 and agg["fallbacks"] == 0
    assert 0.0 < agg["aggregate_jerk_ratio"] < 1.0
    traj = read_csv(out / "seed_0_trajectory.csv")
    dev = max(np.hypot(float(r["opt_x"]) - float(r["rl_x"]), float(r["opt_y"]) - float(r["rl_y"]))
              for r in traj)
    assert dev < 1.0
    text = (out / "seed_1_plan.txt").read_text()
    assert "cost.tracking" in text and "cost.jerk" in text


def test_plan_fallback_exit_code(tmp_path, checkpoint):
    opt = tmp_path / "opt.yaml"
    opt.write_text("max_iterations: 1\n")
    out = tmp_path / "plan"
    rc = main(["plan", "--scenario", "two_lane_3v", "--checkpoint", checkpoint, "--opt-config", str(opt),
               "--out", str(out)])
    assert rc == 2
    assert read_csv(out / "summary.csv")[0]["fallback_engaged"] == "true"


def test_plan_rejects_bad_optimizer_config(tmp_path, checkpoint, capsys):
    opt = tmp_path / "opt.yaml"
    opt.write_text("d_safe: -1\n")
    rc = main(["plan", "--scenario", "two_lane_3v", "--checkpoint", checkpoint, "--opt-config", str(opt),
               "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "d_safe" in capsys.readouterr().err


def test_bench_reports_all_phases(tmp_path, checkpoint):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--scenario", "two_lane_3v", "--checkpoint", checkpoint, "--runs", "1",
                 "--repeats", "5", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r["phase"] for r in rows] == ["inference", "rollout", "solve"]
    assert all(float(r["mean_ms"]) > 0 and float(r["p95_ms"]) > 0 for r in rows)
