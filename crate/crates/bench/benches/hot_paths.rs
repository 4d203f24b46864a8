use std::hint::black_box;
use std::sync::Arc;

use cecollm::cloud::{CloudServer, EvictionPolicy};
use cecollm::codec::{decode_f16, decode_message, encode_f16, encode_message, Activations, ContextUpload, Encoding, Message};
use cecollm::edge::{CostModel, EdgeClient, EdgeConfig, EdgeState, SimCloudLink};
use cecollm::transport::LinkParams;
use cecollm_bench::{desk_model, sample_row};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

fn f16_codec(c: &mut Criterion) {
    let row = sample_row(4096);
    let halves: Vec<u16> = row.iter().map(|&x| encode_f16(x)).collect();
    let mut g = c.benchmark_group("f16");
    g.throughput(Throughput::Elements(row.len() as u64));
    g.bench_function("encode_4096", |b| b.iter(|| black_box(&row).iter().map(|&x| encode_f16(x)).collect::<Vec<_>>()));
    g.bench_function("decode_4096", |b| b.iter(|| black_box(&halves).iter().map(|&h| decode_f16(h)).collect::<Vec<_>>()));
    g.finish();
}

fn frames(c: &mut Criterion) {
    let mut g = c.benchmark_group("frame");
    for enc in [Encoding::F16, Encoding::F32] {
        let msg = Message::ContextUpload(ContextUpload {
            layer: 4,
            first_position: 0,
            num_positions: 30,
            activations: Activations::encode(&sample_row(30 * 256), enc),
        });
        let bytes = encode_message(1, &msg);
        g.throughput(Throughput::Bytes(bytes.len() as u64));
        g.bench_function(format!("encode_upload_{enc:?}"), |b| b.iter(|| encode_message(1, black_box(&msg))));
        g.bench_function(format!("decode_upload_{enc:?}"), |b| b.iter(|| decode_message(black_box(&bytes)).unwrap()));
    }
    g.finish();
}

fn edge_step(c: &mut Criterion) {
    let model = desk_model();
    let (edge, _) = model.split(model.config.split_layer).unwrap();
    let prompt: Vec<u32> = (0..30).map(|i| (i * 7 % 256) as u32).collect();
    c.bench_function("edge/prompt_then_token", |b| {
        b.iter_batched(
            || EdgeState::new(&edge),
            |mut state| {
                let step = state.process(&prompt, 0).unwrap();
                state.decide(&step, 0.8).unwrap();
                let step = state.process(&[42], prompt.len()).unwrap();
                black_box(state.decide(&step, 0.8).unwrap())
            },
            BatchSize::SmallInput,
        )
    });
}

fn simulated_run(c: &mut Criterion) {
    let model = Arc::new(desk_model());
    let client = EdgeClient::new(&model, EdgeConfig { max_new_tokens: 20, ..EdgeConfig::default() }).unwrap();
    let server = Arc::new(CloudServer::new(model.clone(), cecollm::cloud::ServerMode::Partition, None, EvictionPolicy::default()).unwrap());
    let prompt: Vec<u32> = (0..24).map(|i| (i * 13 % 256) as u32).collect();
    let mut g = c.benchmark_group("sim");
    g.sample_size(10);
    let mut session = 0u64;
    g.bench_function("collaborative_20_tokens", |b| {
        b.iter(|| {
            session += 1;
            let mut link = SimCloudLink::new(server.clone(), LinkParams::default(), session, CostModel::default(), 8).unwrap();
            black_box(client.run(&prompt, session, &mut link).unwrap())
        })
    });
    g.finish();
}

criterion_group!(benches, f16_codec, frames, edge_step, simulated_run);
criterion_main!(benches);
