"""Smoke test for the stagecause Python bindings.

Build and install the extension first:

    cd crates/py && maturin develop --release

then run `python python/smoke_test.py`.
"""

import json
import math
import os
import sys
import tempfile

import stagecause_py as sc


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        sys.exit(1)


def main():
    check(set(sc.ENVS) == {"mobile_reach_2d", "grasp_kinematic"}, "env registry")
    check("cmsac" in sc.ALGOS and "mppo" in sc.ALGOS, "algo registry")

    check(sc.gaussian_kl(0.0, 1.0, 0.0, 1.0) == 0.0, "kl of identical gaussians")
    check(abs(sc.gaussian_kl(0.0, 1.0, 1.0, 1.0) - 0.5) < 1e-12, "kl of unit mean shift")

    row = [0.0532, 0.0122, 0.0002, 0.0003, 0.0001]
    sel = sc.select_causal_actions(row)
    check(sel["selected"] == [0, 1] and sel["branch"] == "normalized", "selection of a dispersed row")
    check(abs(sc.coefficient_of_variation(row) - 1.74) < 0.01, "sample cv")

    env = sc.Env("grasp_kinematic", seed=3)
    check(env.n_stages == 4 and len(env.action_names) == 7, "grasp layout")
    obs = env.reset()
    check(len(obs) == env.obs_dim and env.stage_of(obs) == 1, "reset lands in stage 1")
    t = env.step([0.0] * 7)
    check(len(t["reward"]) == len(env.reward_names), "step returns one reward per term")

    gt = env.ground_truth()
    check(gt[0].edge("armx", "r_eefz1") is True, "ground truth armx -> r_eefz1")
    check(gt[1].edge("armrz", "r_ori") is False, "ground truth excludes armrz -> r_ori")
    check("digraph" in sc.to_dot(gt), "dot export")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.json")
        sc.save_matrices(path, gt)
        back = sc.load_matrices(path)
        check(all(a == b for a, b in zip(gt, back)), "matrix file round trip")

    report = sc.evaluate_scripted(env, episodes=10, seed=1)
    check(report["overall_success"] == 1.0, "scripted grasp succeeds")

    mobile = sc.Env("mobile_reach_2d", preset="decoupled", seed=0)
    cfg = {"training_count": 200, "epochs": 2, "hidden": [8], "stages": [1], "workers": 1}
    mats, tables = sc.discover(mobile, cfg)
    check(len(mats) == 1 and mats[0].stage == 1, "tiny discovery run")
    check(all(math.isfinite(x) for r in tables[0]["rows"] for x in r["kld"]), "finite kl table")

    train_cfg = {"total_steps": 300, "eval_every": 300, "eval_episodes": 2, "ppo": {"n_step": 128, "batch": 32, "opt_epochs": 1}}
    tr = sc.Trainer(mobile, "cmppo", mobile.ground_truth(), json.dumps(train_cfg))
    tr.train(300)
    check(tr.step == 300, "trainer advances")
    rec = tr.evaluate()
    check(0.0 <= rec["overall_success"] <= 1.0, "trainer evaluation")
    check(len(tr.act(mobile.reset())) == len(mobile.action_names), "trainer acts")

    print("smoke test passed")


if __name__ == "__main__":
    main()
