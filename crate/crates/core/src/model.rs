//! The zero-shot network: target-state encoder, PosVAE over auxiliary
//! nodes, relation scorer, RGCN stack and a shared prediction head.
//!
//! Everything runs batched on one tape. A batch of `B` images over a graph
//! of `N` nodes is laid out as `B` stacked `N × d` blocks, node rows in
//! class-space order. The graph-only quantities (relation weights and the
//! normalized adjacency) are built once per tape and shared by all images.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::nn::glorot_uniform;
use crate::diffcore::{Activation, Linear, Mlp, MlpSpec, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::embeddings::EmbeddingTable;
use crate::error::{dim_err, Error, Result};
use crate::graph::{GraphMode, KnowledgeGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    RgcnPosvae,
    Rgcn,
    RgcnXl,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::RgcnPosvae, Variant::Rgcn, Variant::RgcnXl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RgcnPosvae => "rgcn_posvae",
            Variant::Rgcn => "rgcn",
            Variant::RgcnXl => "rgcn_xl",
        }
    }

    /// Whether the variant puts auxiliary nodes in the graph.
    pub fn uses_aux(self) -> bool {
        self != Variant::Rgcn
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (rgcn_posvae|rgcn|rgcn_xl)")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_s: usize,
    pub d_h: usize,
    /// Hidden width of every MLP.
    pub hidden: usize,
    pub layers: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 64,
            d_s: 300,
            d_h: 256,
            hidden: 256,
            layers: 2,
            variant: Variant::RgcnPosvae,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("model.layers must be at least 1".into()));
        }
        for (name, v) in [("d_x", self.d_x), ("d_s", self.d_s), ("d_h", self.d_h), ("hidden", self.hidden)] {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Sample auxiliary states from the posterior.
    Train,
    /// Use the posterior mean.
    Eval,
}

/// Graph-side constants for a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInputs {
    /// Binary adjacency with unit diagonal, `N × N`.
    pub adjacency: Tensor,
    /// Class embeddings `S`, `N × d_s`, rows aligned with the adjacency.
    pub embeddings: Tensor,
    pub n_target: usize,
    pub n_aux: usize,
    pub mode: GraphMode,
    /// Ordered off-diagonal pairs `(u, v)` with `A[u][v] = 1`, both orders.
    edges: Vec<(usize, usize)>,
}

impl GraphInputs {
    pub fn new(adjacency: Tensor, embeddings: Tensor, n_target: usize, n_aux: usize, mode: GraphMode) -> Result<Self> {
        let (n, n2) = adjacency.dims2()?;
        let (rows, _) = embeddings.dims2()?;
        if n != n2 || n != rows || n != n_target + n_aux {
            return dim_err(format!(
                "graph inputs: adjacency {n}x{n2}, {rows} embedding rows, {n_target}+{n_aux} nodes"
            ));
        }
        if n_target == 0 {
            return Err(Error::Contract("graph has no target classes".into()));
        }
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && adjacency.get2(u, v) != 0.0 {
                    edges.push((u, v));
                }
            }
        }
        Ok(Self {
            adjacency,
            embeddings,
            n_target,
            n_aux,
            mode,
            edges,
        })
    }

    pub fn from_graph(graph: &KnowledgeGraph, table: &EmbeddingTable) -> Result<Self> {
        let s = table.embedding_matrix(&graph.space)?;
        Self::new(
            graph.adjacency.clone(),
            s,
            graph.space.n_target(),
            graph.space.n_aux(),
            graph.space.mode,
        )
    }

    pub fn len(&self) -> usize {
        self.n_target + self.n_aux
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The target-only subgraph (auxiliary rows and columns dropped).
    pub fn restrict_to_targets(&self) -> Result<Self> {
        let n = self.n_target;
        let d_s = self.embeddings.cols();
        Self::new(
            self.adjacency.block(0, n, 0, n)?,
            self.embeddings.block(0, n, 0, d_s)?,
            n,
            0,
            self.mode,
        )
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// One image: its feature vector and, for variants with auxiliary nodes,
/// the auxiliary probability vector `p^a`.
#[derive(Clone, Copy, Debug)]
pub struct ImageInput<'a> {
    pub features: &'a [f64],
    pub aux_probs: Option<&'a [f64]>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `B × n_target` head outputs.
    pub scores: Var,
    /// PosVAE loss (rgcn_posvae) or auxiliary reconstruction MSE (rgcn_xl).
    pub aux_loss: Option<Var>,
}

/// `μ + exp(logσ/2) ⊙ z`.
pub fn reparameterize(mu: &[f64], logsigma: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logsigma.len() || mu.len() != z.len() {
        return dim_err(format!(
            "reparameterize: lengths {}, {}, {}",
            mu.len(),
            logsigma.len(),
            z.len()
        ));
    }
    Ok(mu
        .iter()
        .zip(logsigma)
        .zip(z)
        .map(|((m, l), z)| m + (l / 2.0).exp() * z)
        .collect())
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))` with `logsigma = log σ²`.
pub fn kl_to_standard_normal(mu: &[f64], logsigma: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logsigma)
        .map(|(m, l)| m * m + l.exp() - l - 1.0)
        .sum::<f64>()
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    target_encoder: Mlp,
    posvae_proj: Option<Linear>,
    posvae_encoder: Option<Mlp>,
    posvae_decoder: Option<Mlp>,
    relation: Mlp,
    rgcn: Vec<ParamId>,
    head: Linear,
}

impl Model {
    /// Allocates the parameters the configured variant uses.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let target_encoder = Mlp::new(
            &mut store,
            "target_encoder",
            MlpSpec::new(vec![c.d_x + c.d_s, c.hidden, c.d_h], Activation::Relu, Activation::Identity)?,
            rng,
        )?;
        let (posvae_proj, posvae_encoder, posvae_decoder) = if c.variant == Variant::RgcnPosvae {
            let proj = Linear::new(&mut store, "posvae_proj", 1, c.d_s, rng)?;
            let enc = Mlp::new(
                &mut store,
                "posvae_encoder",
                MlpSpec::new(vec![2 * c.d_s, c.hidden, 2 * c.d_h], Activation::Relu, Activation::Identity)?,
                rng,
            )?;
            let dec = Mlp::new(
                &mut store,
                "posvae_decoder",
                MlpSpec::new(vec![c.d_h + c.d_s, c.hidden, 1], Activation::Relu, Activation::Sigmoid)?,
                rng,
            )?;
            (Some(proj), Some(enc), Some(dec))
        } else {
            (None, None, None)
        };
        let relation = Mlp::new(
            &mut store,
            "relation",
            MlpSpec::new(vec![2 * c.d_s, c.hidden, 1], Activation::Relu, Activation::Sigmoid)?,
            rng,
        )?;
        let rgcn = (0..c.layers)
            .map(|l| store.add(format!("rgcn.{l}.weight"), glorot_uniform(rng, c.d_h, c.d_h)))
            .collect::<Result<Vec<_>>>()?;
        let head = Linear::new(&mut store, "head", c.d_h, 1, rng)?;
        Ok((
            Self {
                config,
                target_encoder,
                posvae_proj,
                posvae_encoder,
                posvae_decoder,
                relation,
                rgcn,
                head,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Module name of a parameter (the part before the first `.`).
    pub fn param_group(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }

    /// First layer of `mlp` applied to `[left_b ; right_r]` for every pair
    /// `(b, r)`, ordered `b`-major, without materializing the concatenation.
    /// `left` is `B × d_l` and `right` is `R × d_r`; the result is `(B·R) × h`
    /// pre-activations.
    fn split_first_layer(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mlp: &Mlp,
        left: Var,
        right: Var,
    ) -> Result<Var> {
        let (b, d_l) = tape.dims(left);
        let (r, d_r) = tape.dims(right);
        let layer = &mlp.layers[0];
        if d_l + d_r != layer.in_dim {
            return Err(Error::Dimension(format!(
                "{}.0: input width {}, layer expects {}",
                mlp.name,
                d_l + d_r,
                layer.in_dim
            )));
        }
        let w = tape.param(store, layer.weight)?;
        let bias = tape.param(store, layer.bias)?;
        let w_l = tape.slice_rows(w, 0, d_l)?;
        let w_r = tape.slice_rows(w, d_l, d_l + d_r)?;
        let lw = tape.matmul(left, w_l)?;
        let rw = tape.matmul(right, w_r)?;
        let rw = tape.add_row(rw, bias)?;
        let lw = tape.gather_rows(lw, (0..b).flat_map(|i| std::iter::repeat_n(i, r)).collect())?;
        let rw = tape.gather_rows(rw, (0..b).flat_map(|_| 0..r).collect())?;
        tape.add(lw, rw)
    }

    /// Target-node states for every (image, class) pair: row `b·R + y` is
    /// `targetEncoder([x_b ; s_y])`. `x` is `B × d_x`, `s` is `R × d_s`.
    pub fn init_target_states(&self, tape: &mut Tape, store: &ParamStore, x: Var, s: Var) -> Result<Var> {
        let pre = self.split_first_layer(tape, store, &self.target_encoder, x, s)?;
        self.target_encoder.forward_tail(tape, store, pre)
    }

    fn posvae_parts(&self) -> Result<(&Linear, &Mlp, &Mlp)> {
        match (&self.posvae_proj, &self.posvae_encoder, &self.posvae_decoder) {
            (Some(p), Some(e), Some(d)) => Ok((p, e, d)),
            _ => Err(Error::Config(format!("variant {} has no PosVAE", self.variant()))),
        }
    }

    /// Posterior parameters for every (image, aux class) pair. `p` is the
    /// `(B·n_a) × 1` column of probabilities, `b`-major; `s_aux` is
    /// `n_a × d_s`. Returns `(μ, logσ)`, each `(B·n_a) × d_h`.
    pub fn posvae_encode(&self, tape: &mut Tape, store: &ParamStore, p: Var, s_aux: Var) -> Result<(Var, Var)> {
        let (proj, enc, _) = self.posvae_parts()?;
        let (m, one) = tape.dims(p);
        let (n_a, d_s) = tape.dims(s_aux);
        if one != 1 || n_a == 0 || m % n_a != 0 || d_s != self.config.d_s {
            return dim_err(format!("posvae_encode: p {m}x{one}, s_aux {n_a}x{d_s}"));
        }
        let layer = &enc.layers[0];
        let w = tape.param(store, layer.weight)?;
        let bias = tape.param(store, layer.bias)?;
        let w_top = tape.slice_rows(w, 0, d_s)?;
        let w_bot = tape.slice_rows(w, d_s, 2 * d_s)?;
        // [p·w_p + b_p ; s]·W = p·(w_p W_top) + (b_p W_top + s W_bot)
        let wp = tape.param(store, proj.weight)?;
        let bp = tape.param(store, proj.bias)?;
        let v = tape.matmul(wp, w_top)?;
        let c0 = tape.matmul(bp, w_top)?;
        let c = tape.matmul(s_aux, w_bot)?;
        let c = tape.add_row(c, c0)?;
        let c = tape.add_row(c, bias)?;
        let pv = tape.matmul(p, v)?;
        let c = tape.gather_rows(c, (0..m / n_a).flat_map(|_| 0..n_a).collect())?;
        let pre = tape.add(pv, c)?;
        let out = enc.forward_tail(tape, store, pre)?;
        let d_h = self.config.d_h;
        Ok((tape.slice_cols(out, 0, d_h)?, tape.slice_cols(out, d_h, 2 * d_h)?))
    }

    /// `μ + exp(logσ/2) ⊙ z` on the tape.
    pub fn reparameterize(&self, tape: &mut Tape, mu: Var, logsigma: Var, z: Var) -> Result<Var> {
        if tape.dims(mu) != tape.dims(logsigma) || tape.dims(mu) != tape.dims(z) {
            return dim_err("reparameterize: shape mismatch");
        }
        let half = tape.scale(logsigma, 0.5);
        let sd = tape.exp(half);
        let noise = tape.mul(sd, z)?;
        tape.add(mu, noise)
    }

    /// Decoder output in `[0, 1]` for `(B·n_a) × d_h` states.
    pub fn posvae_decode(&self, tape: &mut Tape, store: &ParamStore, h: Var, s_aux: Var) -> Result<Var> {
        let (_, _, dec) = self.posvae_parts()?;
        let (m, d_h) = tape.dims(h);
        let (n_a, d_s) = tape.dims(s_aux);
        if n_a == 0 || m % n_a != 0 || d_h + d_s != dec.spec.input_dim() {
            return dim_err(format!("posvae_decode: h {m}x{d_h}, s_aux {n_a}x{d_s}"));
        }
        let layer = &dec.layers[0];
        let w = tape.param(store, layer.weight)?;
        let bias = tape.param(store, layer.bias)?;
        let w_h = tape.slice_rows(w, 0, d_h)?;
        let w_s = tape.slice_rows(w, d_h, d_h + d_s)?;
        let hw = tape.matmul(h, w_h)?;
        let sw = tape.matmul(s_aux, w_s)?;
        let sw = tape.add_row(sw, bias)?;
        let sw = tape.gather_rows(sw, (0..m / n_a).flat_map(|_| 0..n_a).collect())?;
        let pre = tape.add(hw, sw)?;
        dec.forward_tail(tape, store, pre)
    }

    /// `0.5 Σ (μ² + e^{logσ} − logσ − 1)` over all entries.
    pub fn kl_to_standard_normal(&self, tape: &mut Tape, mu: Var, logsigma: Var) -> Result<Var> {
        let (r, c) = tape.dims(mu);
        let mu2 = tape.mul(mu, mu)?;
        let e = tape.exp(logsigma);
        let t = tape.add(mu2, e)?;
        let t = tape.sub(t, logsigma)?;
        let s = tape.sum(t);
        let s = tape.add_scalar(s, -((r * c) as f64));
        Ok(tape.scale(s, 0.5))
    }

    /// Auxiliary states and the batch-mean PosVAE loss
    /// `mean_{b,y} [ (decode(h_by) − p_by)² + KL_by ]`.
    fn infer_aux_states(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &Tensor,
        s_aux: Var,
        rng: &mut Rng,
        mode: Mode,
    ) -> Result<(Var, Var)> {
        let m = p.len();
        let p_var = tape.constant(p.clone())?;
        let (mu, lv) = self.posvae_encode(tape, store, p_var, s_aux)?;
        let h = match mode {
            Mode::Train => {
                let z = tape.constant(rng.standard_normal(&[m, self.config.d_h]))?;
                self.reparameterize(tape, mu, lv, z)?
            }
            Mode::Eval => mu,
        };
        let dec = self.posvae_decode(tape, store, h, s_aux)?;
        let recon = tape.mse(dec, p_var)?;
        let kl = self.kl_to_standard_normal(tape, mu, lv)?;
        let kl = tape.scale(kl, 1.0 / m as f64);
        let loss = tape.add(recon, kl)?;
        Ok((h, loss))
    }

    /// `W ⊙ A`: symmetrized relation weights on edges, ones on the diagonal,
    /// zeros elsewhere.
    pub fn relation_weights(&self, tape: &mut Tape, store: &ParamStore, graph: &GraphInputs) -> Result<Var> {
        let n = graph.len();
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            base[i * n + i] = graph.adjacency.get2(i, i);
        }
        let edges = graph.directed_edges();
        if edges.is_empty() {
            return tape.constant(Tensor::matrix(n, n, base)?);
        }
        let s = tape.constant(graph.embeddings.clone())?;
        let d_s = tape.dims(s).1;
        if 2 * d_s != self.relation.spec.input_dim() {
            return dim_err(format!(
                "relation: embeddings have width {d_s}, scorer expects {}",
                self.relation.spec.input_dim() / 2
            ));
        }
        let layer = &self.relation.layers[0];
        let w = tape.param(store, layer.weight)?;
        let bias = tape.param(store, layer.bias)?;
        let w_u = tape.slice_rows(w, 0, d_s)?;
        let w_v = tape.slice_rows(w, d_s, 2 * d_s)?;
        let su = tape.matmul(s, w_u)?;
        let su = tape.add_row(su, bias)?;
        let sv = tape.matmul(s, w_v)?;
        let su = tape.gather_rows(su, edges.iter().map(|e| e.0).collect())?;
        let sv = tape.gather_rows(sv, edges.iter().map(|e| e.1).collect())?;
        let pre = tape.add(su, sv)?;
        let raw = self.relation.forward_tail(tape, store, pre)?;
        let terms = edges
            .iter()
            .enumerate()
            .flat_map(|(k, &(u, v))| [(k, u * n + v, 0.5), (k, v * n + u, 0.5)])
            .collect();
        tape.scatter(raw, n, n, base, terms)
    }

    /// `Â = D^{-1/2} (W ⊙ A) D^{-1/2}`.
    pub fn normalized_adjacency(&self, tape: &mut Tape, store: &ParamStore, graph: &GraphInputs) -> Result<Var> {
        let m = self.relation_weights(tape, store, graph)?;
        tape.sym_normalize(m)
    }

    /// `H ← relu(Â H W^l)` for every layer; `h` stacks per-image blocks.
    pub fn rgcn_forward(&self, tape: &mut Tape, store: &ParamStore, a_hat: Var, h: Var) -> Result<Var> {
        let mut h = h;
        for &w in &self.rgcn {
            let w = tape.param(store, w)?;
            let ah = tape.block_left_mul(a_hat, h)?;
            let pre = tape.matmul(ah, w)?;
            h = tape.relu(pre);
        }
        Ok(h)
    }

    /// Shared head, one sigmoid score per row.
    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, rows: Var) -> Result<Var> {
        let pre = self.head.forward(tape, store, rows)?;
        Ok(tape.sigmoid(pre))
    }

    /// Batched forward. `graph` must carry auxiliary nodes for the variants
    /// that use them; the rgcn variant drops any it is given.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &GraphInputs,
        images: &[ImageInput<'_>],
        rng: &mut Rng,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let variant = self.variant();
        if mode == Mode::Train && graph.mode == GraphMode::Test {
            return Err(Error::Config(
                "training forward on a test graph (unseen nodes must not be in the training graph)".into(),
            ));
        }
        let restricted;
        let graph = if variant.uses_aux() {
            if graph.n_aux == 0 {
                return Err(Error::Config(format!(
                    "variant {variant} needs auxiliary nodes; the graph has none (use rgcn)"
                )));
            }
            graph
        } else if graph.n_aux > 0 {
            restricted = graph.restrict_to_targets()?;
            &restricted
        } else {
            graph
        };
        if graph.embeddings.cols() != self.config.d_s {
            return dim_err(format!(
                "graph embeddings have width {}, model expects d_s = {}",
                graph.embeddings.cols(),
                self.config.d_s
            ));
        }
        let b = images.len();
        if b == 0 {
            return Err(Error::Contract("empty image batch".into()));
        }
        let (n_t, n_a, n) = (graph.n_target, graph.n_aux, graph.len());
        let d_x = self.config.d_x;

        let mut xs = Vec::with_capacity(b * d_x);
        let mut ps = Vec::with_capacity(b * n_a);
        for (i, img) in images.iter().enumerate() {
            if img.features.len() != d_x {
                return dim_err(format!("image {i}: {} features, model expects d_x = {d_x}", img.features.len()));
            }
            xs.extend_from_slice(img.features);
            if variant.uses_aux() {
                let p = img
                    .aux_probs
                    .ok_or_else(|| Error::Contract(format!("image {i}: variant {variant} needs aux probabilities")))?;
                if p.len() != n_a {
                    return dim_err(format!("image {i}: {} aux probabilities, graph has {n_a} aux nodes", p.len()));
                }
                if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Contract(format!("image {i}: aux probability {v} outside [0, 1]")));
                }
                ps.extend_from_slice(p);
            }
        }
        let x = tape.constant(Tensor::matrix(b, d_x, xs)?)?;
        let a_hat = self.normalized_adjacency(tape, store, graph)?;
        let d_s = self.config.d_s;

        let (h, aux_p) = match variant {
            Variant::Rgcn => {
                let s = tape.constant(graph.embeddings.clone())?;
                (self.init_target_states(tape, store, x, s)?, None)
            }
            Variant::RgcnXl => {
                let s = tape.constant(graph.embeddings.clone())?;
                (self.init_target_states(tape, store, x, s)?, Some(Tensor::matrix(b, n_a, ps)?))
            }
            Variant::RgcnPosvae => {
                let s_t = tape.constant(graph.embeddings.block(0, n_t, 0, d_s)?)?;
                let s_a = tape.constant(graph.embeddings.block(n_t, n, 0, d_s)?)?;
                let ht = self.init_target_states(tape, store, x, s_t)?;
                let p = Tensor::matrix(b * n_a, 1, ps)?;
                let (ha, vae) = self.infer_aux_states(tape, store, &p, s_a, rng, mode)?;
                let cat = tape.concat_rows(&[ht, ha])?;
                let idx = (0..b)
                    .flat_map(|bi| (0..n).map(move |i| if i < n_t { bi * n_t + i } else { b * n_t + bi * n_a + i - n_t }))
                    .collect();
                let h = tape.gather_rows(cat, idx)?;
                let h = self.rgcn_forward(tape, store, a_hat, h)?;
                let scores = self.target_scores(tape, store, h, b, n, n_t)?;
                return Ok(ForwardOutput {
                    scores,
                    aux_loss: Some(vae),
                });
            }
        };
        let h = self.rgcn_forward(tape, store, a_hat, h)?;
        let scores = self.target_scores(tape, store, h, b, n, n_t)?;
        let aux_loss = match aux_p {
            Some(p) => {
                let rows = tape.gather_rows(h, (0..b).flat_map(|bi| (n_t..n).map(move |i| bi * n + i)).collect())?;
                let pred = self.predict(tape, store, rows)?;
                let pred = tape.reshape(pred, b, n_a)?;
                let target = tape.constant(p)?;
                Some(tape.mse(pred, target)?)
            }
            None => None,
        };
        Ok(ForwardOutput { scores, aux_loss })
    }

    fn target_scores(&self, tape: &mut Tape, store: &ParamStore, h: Var, b: usize, n: usize, n_t: usize) -> Result<Var> {
        let rows = tape.gather_rows(h, (0..b).flat_map(|bi| (0..n_t).map(move |i| bi * n + i)).collect())?;
        let pred = self.predict(tape, store, rows)?;
        tape.reshape(pred, b, n_t)
    }

    /// Eval-mode scores, `B × n_target`.
    pub fn score(&self, store: &ParamStore, graph: &GraphInputs, images: &[ImageInput<'_>]) -> Result<Tensor> {
        let mut tape = Tape::new();
        // eval mode draws nothing
        let mut rng = Rng::new(0);
        let out = self.forward_batch(&mut tape, store, graph, images, &mut rng, Mode::Eval)?;
        Ok(tape.value(out.scores).clone())
    }
}

/// `BCE(scores, labels) + λ · aux_loss`; the BCE alone when there is no
/// auxiliary term.
pub fn joint_loss(tape: &mut Tape, scores: Var, labels: &Tensor, aux_loss: Option<Var>, lambda: f64) -> Result<Var> {
    let bce = tape.bce(scores, labels)?;
    match aux_loss {
        Some(a) if lambda != 0.0 => {
            let a = tape.scale(a, lambda);
            tape.add(bce, a)
        }
        _ => Ok(bce),
    }
}
