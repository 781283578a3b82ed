//! Lossless training snapshots: every parameter with its optimizer moments
//! and step count, both RNG lanes at exact word position, and the iteration
//! counter. Values are stored as f64 so a round-trip is exact for either
//! scalar type, and the entry order is derived from the bundle layout, so
//! save → load → save reproduces the file byte for byte.

use super::{TrainError, TrainState};
use crate::networks::{BundleConfig, NetworkBundle};
use autograd::container::{read_container, write_container, Entry};
use autograd::Scalar;
use ndarray::ArrayD;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;

const SCHEMA: u64 = 1;

fn widen<S: Scalar>(a: &ArrayD<S>) -> ArrayD<f64> {
    a.mapv(|v| v.as_f64())
}

fn push_rng(entries: &mut Vec<Entry>, lane: &str, rng: &ChaCha8Rng) {
    let seed = rng.get_seed();
    let words: Vec<u64> = seed
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    entries.push(Entry::u64(format!("{lane}/seed"), words));
    entries.push(Entry::scalar_u64(format!("{lane}/stream"), rng.get_stream()));
    let pos = rng.get_word_pos();
    entries.push(Entry::u64(
        format!("{lane}/word_pos"),
        vec![pos as u64, (pos >> 64) as u64],
    ));
}

pub fn checkpoint_save<S: Scalar>(
    path: &Path,
    nets: &NetworkBundle<S>,
    state: &TrainState,
) -> Result<(), TrainError> {
    let mut entries = vec![
        Entry::scalar_u64("meta/schema", SCHEMA),
        Entry::scalar_u64("meta/iter", state.iter),
        Entry::scalar_u64("meta/scale", nets.scale as u64),
    ];
    push_rng(&mut entries, "rng/data", &state.data_rng);
    push_rng(&mut entries, "rng/noise", &state.noise_rng);
    for store in nets.stores() {
        for p in store.params() {
            let base = format!("{}/{}", store.name, p.name);
            entries.push(Entry::f64(format!("{base}/value"), widen(&p.value)));
            entries.push(Entry::f64(format!("{base}/m"), widen(&p.m)));
            entries.push(Entry::f64(format!("{base}/v"), widen(&p.v)));
            entries.push(Entry::scalar_u64(format!("{base}/step"), p.step));
        }
    }
    write_container(path, &entries)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn take_u64(map: &HashMap<&str, &Entry>, name: &str) -> Result<u64, TrainError> {
    let e = map.get(name).ok_or_else(|| bad(format!("missing entry {name}")))?;
    let v = e.data.as_u64().ok_or_else(|| bad(format!("{name} is not a u64 entry")))?;
    if v.len() != 1 {
        return Err(bad(format!("{name} holds {} words, expected 1", v.len())));
    }
    Ok(v[0])
}

fn restore_rng(map: &HashMap<&str, &Entry>, lane: &str) -> Result<ChaCha8Rng, TrainError> {
    let seed_name = format!("{lane}/seed");
    let e = map.get(seed_name.as_str()).ok_or_else(|| bad(format!("missing entry {seed_name}")))?;
    let words = e.data.as_u64().ok_or_else(|| bad(format!("{seed_name} is not a u64 entry")))?;
    if words.len() != 4 {
        return Err(bad(format!("{seed_name} holds {} words, expected 4", words.len())));
    }
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(take_u64(map, &format!("{lane}/stream"))?);
    let pos_name = format!("{lane}/word_pos");
    let e = map.get(pos_name.as_str()).ok_or_else(|| bad(format!("missing entry {pos_name}")))?;
    let halves = e.data.as_u64().ok_or_else(|| bad(format!("{pos_name} is not a u64 entry")))?;
    if halves.len() != 2 {
        return Err(bad(format!("{pos_name} holds {} words, expected 2", halves.len())));
    }
    rng.set_word_pos((halves[0] as u128) | ((halves[1] as u128) << 64));
    Ok(rng)
}

fn take_array<S: Scalar>(
    map: &HashMap<&str, &Entry>,
    name: &str,
    shape: &[usize],
) -> Result<ArrayD<S>, TrainError> {
    let e = map.get(name).ok_or_else(|| bad(format!("missing entry {name}")))?;
    let a = e.data.as_f64().ok_or_else(|| bad(format!("{name} is not an f64 entry")))?;
    if a.shape() != shape {
        return Err(bad(format!(
            "{name} has shape {:?}, the architecture expects {:?}",
            a.shape(),
            shape
        )));
    }
    Ok(a.mapv(S::from_f64))
}

/// Rebuild a bundle and training state from a snapshot. The architecture
/// comes from `cfg`; the file must match it entry for entry.
pub fn checkpoint_load<S: Scalar>(
    path: &Path,
    cfg: &BundleConfig,
) -> Result<(NetworkBundle<S>, TrainState), TrainError> {
    let entries = read_container(path)?;
    let map: HashMap<&str, &Entry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    if map.len() != entries.len() {
        return Err(bad("duplicate entry names"));
    }

    let schema = take_u64(&map, "meta/schema")?;
    if schema != SCHEMA {
        return Err(bad(format!("schema {schema} is not supported (expected {SCHEMA})")));
    }
    let iter = take_u64(&map, "meta/iter")?;
    let scale = take_u64(&map, "meta/scale")? as usize;
    if scale != cfg.scale {
        return Err(bad(format!(
            "snapshot was taken at scale {scale}, the config requests {}",
            cfg.scale
        )));
    }

    let data_rng = restore_rng(&map, "rng/data")?;
    let noise_rng = restore_rng(&map, "rng/noise")?;

    // Init seed is irrelevant: every parameter is overwritten below.
    let mut nets = NetworkBundle::<S>::build(cfg, 0)?;
    let mut consumed = 9usize; // meta + two rng lanes
    for store in nets.stores_mut() {
        let store_name = store.name.clone();
        for i in 0..store.params().len() {
            let p = store.param_mut(i);
            let base = format!("{store_name}/{}", p.name);
            let shape = p.value.shape().to_vec();
            p.value = take_array(&map, &format!("{base}/value"), &shape)?;
            p.m = take_array(&map, &format!("{base}/m"), &shape)?;
            p.v = take_array(&map, &format!("{base}/v"), &shape)?;
            p.step = take_u64(&map, &format!("{base}/step"))?;
            consumed += 4;
        }
    }
    if consumed != entries.len() {
        return Err(bad(format!(
            "snapshot holds {} entries, the architecture accounts for {consumed}",
            entries.len()
        )));
    }

    let state = TrainState { iter, data_rng, noise_rng, best_snapshot: None };
    Ok((nets, state))
}
