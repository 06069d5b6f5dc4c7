//! Causal multimodal transformer over frame patches and question text,
//! trained by next-token prediction on answer tokens.

use std::collections::BTreeMap;
use std::rc::Rc;

use omniview_nn::{AttentionMask, Graph, Init, LayerNorm, Linear, Mat, ModelConfig, ParamId, ParamStore, TransformerBlock, Var};
use omniview_worldgen::vocab::{ANS, EOS, SEP};
use omniview_worldgen::{QaCategory, Token};
use rand::Rng;

use crate::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct Understanding {
    pub tok_embed: ParamId,
    pub patch: Linear,
    pub frame_embed: ParamId,
    pub patch_pos: ParamId,
    pub text_pos: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNorm,
    config: ModelConfig,
}

/// Result of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct UndForward {
    /// `[text_len, vocab]` next-token logits at the text positions.
    pub logits: Var,
    /// `[frames · tokens_per_frame, D]` layer-averaged visual features.
    pub f_und: Var,
}

/// Text layout `[SEP] question [ANS] answer` plus the `(row, token)` pairs
/// scored by the loss: every answer token and the closing EOS.
pub fn und_sequence(question: &[Token], answer: &[Token]) -> (Vec<Token>, Vec<(usize, usize)>) {
    let mut text = Vec::with_capacity(question.len() + answer.len() + 2);
    text.push(SEP);
    text.extend_from_slice(question);
    text.push(ANS);
    let first = text.len() - 1;
    text.extend_from_slice(answer);
    let targets = answer
        .iter()
        .chain(std::iter::once(&EOS))
        .enumerate()
        .map(|(k, &t)| (first + k, t as usize))
        .collect();
    (text, targets)
}

impl Understanding {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.d_model;
        let p2 = config.patch * config.patch;
        Understanding {
            tok_embed: store.add_init("und.tok_embed", config.vocab_size, d, Init::Normal(1.0 / (d as f64).sqrt()), rng),
            patch: Linear::new(store, "und.patch", 3 * p2, d, true, rng),
            frame_embed: store.add_init("und.frame_embed", config.max_frames, d, Init::Normal(0.02), rng),
            patch_pos: store.add_init("und.patch_pos", config.tokens_per_frame(), d, Init::Normal(0.02), rng),
            text_pos: store.add_init("und.text_pos", config.max_text, d, Init::Normal(0.02), rng),
            blocks: (0..config.und_layers)
                .map(|l| TransformerBlock::new(store, &format!("und.block{l}"), d, config.n_heads, false, rng))
                .collect(),
            ln_f: LayerNorm::new(store, "und.ln_f", d, rng),
            config: *config,
        }
    }

    /// Layers (1-based) whose outputs are averaged into `F_und`.
    pub fn feature_layers(&self) -> (usize, usize) {
        let l = self.blocks.len();
        (l.div_ceil(2), l)
    }

    /// Runs the causal stack over `[visual tokens][text]`. `visual` holds one
    /// RGB latent grid per frame.
    pub fn forward(&self, g: &mut Graph, visual: &[Mat], text: &[Token]) -> Result<UndForward> {
        let c = &self.config;
        let t = c.tokens_per_frame();
        let pd = 3 * c.patch * c.patch;
        if visual.is_empty() || visual.len() > c.max_frames {
            return Err(CoreError::Contract(format!("{} frames, expected 1..={}", visual.len(), c.max_frames)));
        }
        if let Some(m) = visual.iter().find(|m| m.shape() != (t, pd)) {
            return Err(CoreError::Contract(format!("frame latent {:?}, expected ({t}, {pd})", m.shape())));
        }
        if text.is_empty() || text.len() > c.max_text {
            return Err(CoreError::Contract(format!("text length {} outside 1..={}", text.len(), c.max_text)));
        }
        if let Some(&bad) = text.iter().find(|&&tok| tok as usize >= c.vocab_size) {
            return Err(CoreError::Contract(format!("token {bad} outside vocabulary of {}", c.vocab_size)));
        }
        let nf = visual.len();
        let nv = nf * t;

        let patches = g.constant(Mat::concat_rows(&visual.iter().collect::<Vec<_>>()));
        let vis = self.patch.forward(g, patches);
        let fe = g.param(self.frame_embed);
        let fe = g.gather_rows(fe, (0..nv).map(|r| r / t).collect());
        let pp = g.param(self.patch_pos);
        let pp = g.gather_rows(pp, (0..nv).map(|r| r % t).collect());
        let vis = g.add(vis, fe);
        let vis = g.add(vis, pp);

        let emb = g.param(self.tok_embed);
        let txt = g.gather_rows(emb, text.iter().map(|&x| x as usize).collect());
        let tp = g.param(self.text_pos);
        let tp = g.gather_rows(tp, (0..text.len()).collect());
        let txt = g.add(txt, tp);

        let mut x = g.concat_rows(&[vis, txt]);
        let mask = Rc::new(AttentionMask::causal(nv + text.len()));
        let (mid, last) = self.feature_layers();
        let mut mid_h = None;
        for (l, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, x, Some(mask.clone()), None)?;
            if l + 1 == mid {
                mid_h = Some(x);
            }
        }
        debug_assert_eq!(last, self.blocks.len());
        let mid_h = mid_h.expect("mid layer visited");
        let a = g.slice_rows(mid_h, 0, nv);
        let b = g.slice_rows(x, 0, nv);
        let sum = g.add(a, b);
        let f_und = g.scale(sum, 0.5);

        let h = self.ln_f.forward(g, x);
        let h_txt = g.slice_rows(h, nv, text.len());
        let logits = g.matmul_t(h_txt, emb);
        Ok(UndForward { logits, f_und })
    }

    /// Mean negative log-likelihood of the scored answer positions.
    pub fn loss(&self, g: &mut Graph, logits: Var, targets: Vec<(usize, usize)>) -> Var {
        g.cross_entropy(logits, targets)
    }

    /// Greedy decoding after `[SEP] question [ANS]`, stopping at EOS or
    /// `max_tokens`. Ties go to the lowest token id.
    pub fn answer(&self, store: &ParamStore, visual: &[Mat], question: &[Token], max_tokens: usize) -> Result<Vec<Token>> {
        let (mut text, _) = und_sequence(question, &[]);
        let mut out = Vec::new();
        for _ in 0..max_tokens {
            if text.len() >= self.config.max_text {
                break;
            }
            let mut g = Graph::new(store);
            let fwd = self.forward(&mut g, visual, &text)?;
            let logits = g.value(fwd.logits);
            let row = logits.row(logits.rows() - 1);
            let next = argmax_lowest(row) as Token;
            if next == EOS {
                break;
            }
            out.push(next);
            text.push(next);
        }
        Ok(out)
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Whitespace-normalized, case-folded string equality.
pub fn exact_match(pred: &str, gt: &str) -> bool {
    normalize(pred) == normalize(gt)
}

/// Mean exact match per category.
pub fn category_accuracy(results: &[(QaCategory, bool)]) -> BTreeMap<QaCategory, f64> {
    let mut acc: BTreeMap<QaCategory, (usize, usize)> = BTreeMap::new();
    for &(c, ok) in results {
        let e = acc.entry(c).or_default();
        e.0 += ok as usize;
        e.1 += 1;
    }
    acc.into_iter().map(|(c, (hit, n))| (c, hit as f64 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, Understanding, ModelConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = ModelConfig::micro();
        let und = Understanding::new(&mut store, &cfg, &mut rng);
        (store, und, cfg)
    }

    fn frames(n: usize, seed: u64) -> Vec<Mat> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Mat::from_fn(4, 12, |_, _| rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn sequence_layout_scores_answer_and_eos() {
        let (text, targets) = und_sequence(&[10, 11], &[7]);
        assert_eq!(text, vec![SEP, 10, 11, ANS, 7]);
        assert_eq!(targets, vec![(3, 7), (4, EOS as usize)]);
    }

    #[test]
    fn f_und_shape_and_frame_sensitivity() {
        let (store, und, _) = setup();
        let vis = frames(3, 2);
        let run = |vis: &[Mat]| {
            let mut g = Graph::new(&store);
            let f = und.forward(&mut g, vis, &[SEP, 30, ANS]).unwrap();
            g.value(f.f_und).clone()
        };
        let a = run(&vis);
        assert_eq!(a.shape(), (3 * 4, 8));
        let mut vis2 = vis.clone();
        vis2[2].data_mut()[0] += 0.5;
        let b = run(&vis2);
        assert_eq!(a.slice_rows(0, 8), b.slice_rows(0, 8), "earlier frames unaffected");
        assert!(a.slice_rows(8, 4).max_abs_diff(&b.slice_rows(8, 4)) > 1e-6);
    }

    #[test]
    fn logits_ignore_future_tokens() {
        let (store, und, _) = setup();
        let vis = frames(2, 3);
        let run = |text: &[Token]| {
            let mut g = Graph::new(&store);
            let f = und.forward(&mut g, &vis, text).unwrap();
            g.value(f.logits).slice_rows(0, 3)
        };
        assert_eq!(run(&[SEP, 20, ANS, 0, 0]), run(&[SEP, 20, ANS, 9, 40]));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (store, und, cfg) = setup();
        let mut g = Graph::new(&store);
        assert!(und.forward(&mut g, &frames(4, 1), &[SEP]).is_err());
        assert!(und.forward(&mut g, &frames(1, 1), &[]).is_err());
        assert!(und.forward(&mut g, &frames(1, 1), &[cfg.vocab_size as Token]).is_err());
        assert!(und.forward(&mut g, &frames(1, 1), &vec![SEP; cfg.max_text + 1]).is_err());
    }

    #[test]
    fn greedy_decoding_is_total_and_deterministic() {
        let (store, und, cfg) = setup();
        let vis = frames(2, 4);
        let a = und.answer(&store, &vis, &[30, 31], 4).unwrap();
        assert!(a.len() <= 4 && a.iter().all(|&t| (t as usize) < cfg.vocab_size));
        assert_eq!(a, und.answer(&store, &vis, &[30, 31], 4).unwrap());
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn exact_match_normalizes() {
        assert!(exact_match("red", "red"));
        assert!(exact_match("red ", "Red"));
        assert!(exact_match(" two  words", "TWO words"));
        assert!(!exact_match("red", "blue"));
        let res = [
            (QaCategory::ObjectCount, true),
            (QaCategory::ObjectCount, false),
            (QaCategory::ObjectCount, true),
            (QaCategory::AppearanceOrder, false),
        ];
        let acc = category_accuracy(&res);
        assert!((acc[&QaCategory::ObjectCount] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc[&QaCategory::AppearanceOrder], 0.0);
    }
}
