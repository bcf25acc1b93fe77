use criterion::{black_box, criterion_group, criterion_main, Criterion};
use decompl_core::harness::evaluate;
use decompl_core::model::{forward_frame, predict_clip, total_loss, ModelConfig, ModelParams};
use decompl_core::synth::{generate, SynthConfig};
use decompl_core::tensor::Tape;
use decompl_core::TaskConfig;

fn model(c: &mut Criterion) {
    let task = TaskConfig::volleyball();
    let params = ModelParams::new(ModelConfig::default(), task.clone(), 0).unwrap();
    let data = generate(&SynthConfig { clips_per_class: 2, ..SynthConfig::default() }, &task).unwrap();
    let clip = &data.clips[0];
    let frame = &clip.frames[0];

    c.bench_function("forward frame N=12", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            black_box(forward_frame(&mut tape, &params, &frame.boxes, &frame.features).unwrap());
        })
    });
    c.bench_function("forward+backward frame N=12", |b| {
        let mut store = params.store.clone();
        b.iter(|| {
            let mut tape = Tape::new();
            let pred = forward_frame(&mut tape, &params, &frame.boxes, &frame.features).unwrap();
            let loss = total_loss(&mut tape, &pred, clip.group_label, &frame.actions, &task).unwrap();
            store.zero_grad();
            tape.backward(loss.total, &mut store).unwrap();
        })
    });
    c.bench_function("predict clip T=10", |b| b.iter(|| black_box(predict_clip(&params, clip).unwrap())));
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    group.bench_function("16 clips", |b| b.iter(|| black_box(evaluate(&data, &params).unwrap())));
    group.finish();
}

criterion_group!(benches, model);
criterion_main!(benches);
