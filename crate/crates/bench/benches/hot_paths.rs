// SPDX-License-Identifier: Apache-2.0

//! Per-tick costs: wire codec, bus fan-out, retargeting, IK, alignment and
//! policy inference.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use openteach_core::imitation::{bc_fit_linear, KnnPolicy, Policy};
use openteach_core::pipeline::HandPose;
use openteach_core::recorder::align_timestamps;
use openteach_core::retarget::{arm_retarget, palm_frame, thumb_ik, ClutchState, HandRetargetConfig};
use openteach_core::simrobot::models::{reference_thumb, thumb_home};
use openteach_core::simrobot::{ik_solve, IkConfig, IkTarget};
use openteach_core::wire::codec::{decode, encode};
use openteach_core::wire::PayloadKind;
use openteach_core::{Bus, Config, Envelope, Payload, Pose, Timestamp, TopicPolicy};

fn hand() -> openteach_core::HandFrame {
    HandPose::default().frame(Timestamp::manual(1_000_000))
}

fn codec(c: &mut Criterion) {
    let env = Envelope {
        topic: "hand/raw".into(),
        seq: 42,
        ts: Timestamp::manual(1_000_000),
        payload: Payload::Hand(hand()),
    };
    let bytes = encode(&env).unwrap();
    c.bench_function("codec/encode_hand", |b| b.iter(|| encode(black_box(&env)).unwrap()));
    c.bench_function("codec/decode_hand", |b| b.iter(|| decode(black_box(&bytes)).unwrap()));
}

fn bus(c: &mut Criterion) {
    let bus = Bus::new();
    bus.register("hand/raw", PayloadKind::HandFrame, TopicPolicy::queue(64))
        .unwrap();
    let mut subs: Vec<_> = (0..4).map(|_| bus.subscribe("hand/raw").unwrap()).collect();
    let frame = hand();
    c.bench_function("bus/publish_4_subscribers", |b| {
        b.iter(|| {
            bus.publish("hand/raw", Payload::Hand(frame.clone())).unwrap();
            for s in subs.iter_mut() {
                black_box(s.try_recv().unwrap());
            }
        })
    });
}

fn retarget(c: &mut Criterion) {
    let f = hand();
    c.bench_function("retarget/palm_frame", |b| b.iter(|| palm_frame(black_box(&f)).unwrap()));
    let cs = ClutchState::engaged(&f, Pose::identity(), 1.0).unwrap();
    let mut moved = f.clone();
    for k in moved.keypoints.iter_mut() {
        k.x += 0.01;
    }
    c.bench_function("retarget/arm_clutch", |b| {
        b.iter(|| arm_retarget(black_box(&cs), black_box(&moved)).unwrap())
    });
}

fn ik(c: &mut Criterion) {
    let arm = Config::default().robot.arm;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let targets: Vec<Pose> = (0..64)
        .map(|_| {
            let q: Vec<f64> = arm
                .model
                .joints
                .iter()
                .map(|j| rng.gen_range(j.limits.0..=j.limits.1))
                .collect();
            arm.model.fk(&q).unwrap()
        })
        .collect();
    let cfg = IkConfig::default();
    let mut i = 0;
    c.bench_function("ik/arm_pose_from_home", |b| {
        b.iter(|| {
            i = (i + 1) % targets.len();
            ik_solve(&arm.model, IkTarget::Pose(targets[i]), &arm.home, &cfg).unwrap()
        })
    });
    let chain = reference_thumb();
    let tcfg = HandRetargetConfig::default().thumb_ik;
    let home = thumb_home();
    let mut near = home;
    for (k, v) in near.iter_mut().enumerate() {
        *v += 0.05 * (k as f64 + 1.0);
    }
    let tip = chain.fk(&near).unwrap().position;
    c.bench_function("ik/thumb_reachable", |b| {
        b.iter(|| thumb_ik(black_box(&tip), &chain, &home, &tcfg).unwrap())
    });
    // Out of reach: every restart seed runs to the iteration cap.
    let far = tip * 10.0;
    c.bench_function("ik/thumb_unreachable", |b| {
        b.iter(|| thumb_ik(black_box(&far), &chain, &home, &tcfg).unwrap())
    });
}

fn align(c: &mut Criterion) {
    // Ten seconds of 90 Hz states against 60 Hz commands.
    let primary: Vec<u64> = (0..900).map(|k| k * 11_111_111).collect();
    let other: Vec<u64> = (0..600).map(|k| k * 16_666_667 + 3_000_000).collect();
    c.bench_function("recorder/align_900x600", |b| {
        b.iter(|| align_timestamps(black_box(&primary), &[&other], 1.0 / 60.0).unwrap())
    });
}

fn policies(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let obs: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..11).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let act: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let query = obs[17].clone();
    c.bench_function("imitation/linear_fit_2000", |b| {
        b.iter_batched(
            || (),
            |_| bc_fit_linear(&obs, &act, 1e-6).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let linear = bc_fit_linear(&obs, &act, 1e-6).unwrap();
    c.bench_function("imitation/linear_act", |b| {
        b.iter(|| linear.act(black_box(&query)).unwrap())
    });
    let knn = KnnPolicy::new(obs.clone(), act.clone(), 5).unwrap();
    c.bench_function("imitation/knn_act_2000", |b| {
        b.iter(|| knn.act(black_box(&query)).unwrap())
    });
}

criterion_group!(benches, codec, bus, retarget, ik, align, policies);
criterion_main!(benches);
