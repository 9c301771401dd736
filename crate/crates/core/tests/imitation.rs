// SPDX-License-Identifier: Apache-2.0

//! Demonstrations end to end: record, compile, replay, train, evaluate.

use openteach_core::imitation::{collect_demos, demo_logs, evaluate, replay, Algo, AnyPolicy, ReachTask};
use openteach_core::pipeline::topics;
use openteach_core::recorder::{compile, Demonstration};
use openteach_core::{Config, Payload};

#[test]
fn open_loop_replay_reaches_recorded_final_state() {
    let cfg = Config::default();
    let tol = 0.5 / cfg.imitation.task.rate_hz;
    for index in 0..3 {
        let (logs, hash) = demo_logs(&cfg, index).unwrap();
        let (demo, _) = compile(&logs, topics::STATE, topics::COMMAND, Some(tol), &hash).unwrap();
        assert!(demo.steps.len() > 10);
        let states = &logs.iter().find(|l| l.topic == topics::STATE).unwrap().samples;
        let last_ts = demo.steps.last().unwrap().ts;
        let i = states.iter().position(|r| r.ts == last_ts).unwrap();
        let Payload::State(recorded) = &states[i + 1].payload else {
            panic!("state log holds a non-state payload");
        };
        let replayed = replay(&cfg.robot, &demo, cfg.imitation.task.rate_hz).unwrap();
        let err = replayed
            .joints
            .q
            .iter()
            .zip(&recorded.joints.q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "demo {index}: joint error {err}");
        assert!((replayed.ee.position - recorded.ee.position).norm() <= 1e-6);
    }
}

#[test]
fn demos_survive_files_and_train_policies() {
    let cfg = Config::default();
    let demos = collect_demos(&cfg, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut loaded = Vec::new();
    for (i, d) in demos.iter().enumerate() {
        let p = dir.path().join(format!("demo{i}.otd"));
        d.save(&p).unwrap();
        let back = Demonstration::load(&p).unwrap();
        assert_eq!(&back, d);
        assert_eq!(back.meta.config_hash.len(), 64);
        loaded.push(back);
    }
    let task = ReachTask::new(&cfg.imitation.task, &cfg.robot).unwrap();
    for algo in [Algo::Linear, Algo::Knn] {
        let policy = AnyPolicy::train(&loaded, algo, &cfg.imitation).unwrap();
        let path = dir.path().join("policy.otp");
        policy.save(&path).unwrap();
        let policy = AnyPolicy::load(&path).unwrap();
        let report = evaluate(&task, &policy, 4).unwrap();
        assert_eq!(report.episodes.len(), 4);
        for e in &report.episodes {
            assert!(e.error_m.is_finite());
            assert_eq!(e.success, e.error_m <= cfg.imitation.task.success_radius);
        }
    }
}
