use std::rc::Rc;

use omniview_nn::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: usize = 5;
const LEN: usize = 6;
const D: usize = 16;

/// Tiny causal transformer asked to repeat the first token at every position.
struct CopyFirst {
    embed: ParamId,
    pos: ParamId,
    block: TransformerBlock,
    head: Linear,
}

impl CopyFirst {
    fn new(store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CopyFirst {
            embed: store.add_init("embed", VOCAB, D, Init::Normal(0.5), &mut rng),
            pos: store.add_init("pos", LEN, D, Init::Normal(0.5), &mut rng),
            block: TransformerBlock::new(store, "block0", D, 2, false, &mut rng),
            head: Linear::new(store, "head", D, VOCAB, true, &mut rng),
        }
    }

    fn logits(&self, g: &mut Graph, seq: &[usize]) -> Var {
        let e = g.param(self.embed);
        let x = g.gather_rows(e, seq.to_vec());
        let p = g.param(self.pos);
        let x = g.add(x, p);
        let x = self.block.forward(g, x, Some(Rc::new(AttentionMask::causal(LEN))), None).unwrap();
        self.head.forward(g, x)
    }

    fn accuracy(&self, store: &ParamStore, data: &[Vec<usize>]) -> f64 {
        let mut hits = 0;
        for seq in data {
            let mut g = Graph::new(store);
            let l = self.logits(&mut g, seq);
            let m = g.value(l);
            for r in 0..LEN {
                let row = m.row(r);
                let best = (0..VOCAB).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                hits += usize::from(best == seq[0]);
            }
        }
        hits as f64 / (data.len() * LEN) as f64
    }
}

fn dataset(n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..LEN).map(|_| rng.random_range(0..VOCAB)).collect()).collect()
}

#[test]
fn adamw_trains_a_causal_block_and_checkpoints_restore_it() {
    let mut store = ParamStore::new();
    let model = CopyFirst::new(&mut store, 1);
    let train = dataset(64, 2);
    let test = dataset(32, 3);
    let before = model.accuracy(&store, &test);

    let mut opt = AdamW::new(AdamWConfig::default());
    let total = 400;
    for it in 0..total {
        let mut grads = Grads::new(store.len());
        for seq in train.iter().skip(it as usize % 8 * 8).take(8) {
            let mut g = Graph::new(&store);
            let l = model.logits(&mut g, seq);
            let loss = g.cross_entropy(l, (0..LEN).map(|r| (r, seq[0])).collect());
            grads.merge(&g.backward(loss));
        }
        grads.scale(1.0 / 8.0);
        clip_grad_norm(&mut grads, 1.0);
        opt.step(&mut store, &grads, warmup_lr(it, total, 1e-2, 0.05)).unwrap();
    }
    let after = model.accuracy(&store, &test);
    assert!(after >= 0.95 && after > before + 0.3, "accuracy {before} -> {after}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("copy.omck");
    write_checkpoint(&path, &store, "task = copy_first\n").unwrap();
    let mut fresh = ParamStore::new();
    let reloaded = CopyFirst::new(&mut fresh, 99);
    assert_ne!(hash_params(&fresh, ""), hash_params(&store, ""));
    let ck = read_checkpoint(&path).unwrap();
    assert_eq!(ck.config_text, "task = copy_first\n");
    ck.load_into(&mut fresh).unwrap();
    assert_eq!(reloaded.accuracy(&fresh, &test), after);
    for seq in &test[..4] {
        let (mut ga, mut gb) = (Graph::new(&store), Graph::new(&fresh));
        let (la, lb) = (model.logits(&mut ga, seq), reloaded.logits(&mut gb, seq));
        assert!(ga.value(la).max_abs_diff(gb.value(lb)) < 1e-4);
    }
}

#[test]
fn frozen_subtree_survives_training_untouched() {
    let mut store = ParamStore::new();
    let model = CopyFirst::new(&mut store, 4);
    store.set_frozen("block0", true);
    let frozen = hash_params(&store, "block0");
    let head = hash_params(&store, "head");
    let mut opt = AdamW::new(AdamWConfig::default());
    for seq in dataset(10, 5) {
        let mut g = Graph::new(&store);
        let l = model.logits(&mut g, &seq);
        let loss = g.cross_entropy(l, vec![(LEN - 1, seq[0])]);
        let grads = g.backward(loss);
        assert_eq!(grads.max_abs_with_prefix(&store, "block0"), 0.0);
        opt.step(&mut store, &grads, 1e-2).unwrap();
    }
    assert_eq!(hash_params(&store, "block0"), frozen);
    assert_ne!(hash_params(&store, "head"), head);
}
