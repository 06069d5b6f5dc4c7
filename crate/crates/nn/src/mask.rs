/// Boolean attention pattern: entry `(q, k)` is true when query `q` may
/// attend to key `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Builds a mask from a predicate. Panics if some query row allows no key,
    /// since such a row has no defined softmax.
    pub fn from_fn(queries: usize, keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(queries * keys);
        for q in 0..queries {
            let start = allowed.len();
            allowed.extend((0..keys).map(|k| f(q, k)));
            assert!(keys == 0 || allowed[start..].iter().any(|a| *a), "attention mask row {q} allows no key");
        }
        AttentionMask { queries, keys, allowed }
    }

    pub fn full(queries: usize, keys: usize) -> Self {
        Self::from_fn(queries, keys, |_, _| true)
    }

    /// Standard autoregressive mask: position `q` sees `0..=q`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |q, k| k <= q)
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    #[inline]
    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }

    #[inline]
    pub(crate) fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.keys..(q + 1) * self.keys]
    }
}
