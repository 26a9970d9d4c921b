//! Mixture-of-LoRA layer: frozen residual plus routed expert deltas.
//!
//! `h(x) = Ŵx + Σ_k g_k(x) · s · A_k (B_k x)` where `g_k` is either the bank's
//! scalar routing weight `α_k` or a softmax over the `top_k` largest router
//! logits `routerᵀ x`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bad::{load_bank, reconstruct, save_bank, ExpertBank};
use crate::dog::{regroup_with, GroupingPolicy, Rescale};
use crate::linops::{dot, read_bmat, write_bmat, DenseMatrix};
use crate::{Error, Result, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub enum GateMode {
    /// `g_k(x) = α_k` for every input.
    ScalarAlpha,
    /// `g(x) = softmax over the top_k entries of routerᵀx`, zero elsewhere.
    InputTopK { router: DenseMatrix, top_k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeLoraLayer {
    bank: ExpertBank,
    gate: GateMode,
}

/// Gradients of a scalar objective with respect to every trainable part.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub grad_a: Vec<DenseMatrix>,
    pub grad_b: Vec<DenseMatrix>,
    pub grad_alpha: Vec<f64>,
    pub grad_router: Option<DenseMatrix>,
}

impl LayerGradients {
    pub fn zeros_like(layer: &MoeLoraLayer) -> Self {
        let (m, n) = layer.bank.shape();
        let (k, r) = (layer.bank.num_experts(), layer.bank.rank());
        Self {
            grad_a: vec![DenseMatrix::zeros(m, r); k],
            grad_b: vec![DenseMatrix::zeros(r, n); k],
            grad_alpha: vec![0.0; k],
            grad_router: match &layer.gate {
                GateMode::ScalarAlpha => None,
                GateMode::InputTopK { router, .. } => Some(DenseMatrix::zeros(router.rows(), router.cols())),
            },
        }
    }

    /// `self += weight * other`.
    pub fn accumulate(&mut self, weight: f64, other: &LayerGradients) {
        for (a, b) in self.grad_a.iter_mut().zip(&other.grad_a) {
            a.add_scaled(weight, b).expect("same layer");
        }
        for (a, b) in self.grad_b.iter_mut().zip(&other.grad_b) {
            a.add_scaled(weight, b).expect("same layer");
        }
        for (a, b) in self.grad_alpha.iter_mut().zip(&other.grad_alpha) {
            *a += weight * b;
        }
        if let (Some(a), Some(b)) = (self.grad_router.as_mut(), other.grad_router.as_ref()) {
            a.add_scaled(weight, b).expect("same layer");
        }
    }
}

impl MoeLoraLayer {
    pub fn scalar(bank: ExpertBank) -> Self {
        Self {
            bank,
            gate: GateMode::ScalarAlpha,
        }
    }

    pub fn gated(bank: ExpertBank, router: DenseMatrix, top_k: usize) -> Result<Self> {
        let (_, n) = bank.shape();
        let k = bank.num_experts();
        if router.shape() != (n, k) {
            return Err(Error::Dimension(format!(
                "router is {:?}, expected ({n}, {k})",
                router.shape()
            )));
        }
        if top_k == 0 || top_k > k {
            return Err(Error::InvalidParameter(format!("top_k = {top_k} must lie in 1..={k}")));
        }
        Ok(Self {
            bank,
            gate: GateMode::InputTopK { router, top_k },
        })
    }

    pub fn bank(&self) -> &ExpertBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut ExpertBank {
        &mut self.bank
    }

    pub fn gate(&self) -> &GateMode {
        &self.gate
    }

    pub fn router_mut(&mut self) -> Option<&mut DenseMatrix> {
        match &mut self.gate {
            GateMode::ScalarAlpha => None,
            GateMode::InputTopK { router, .. } => Some(router),
        }
    }

    /// `(m, n)`.
    pub fn shape(&self) -> (usize, usize) {
        self.bank.shape()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        let n = self.bank.shape().1;
        if x.len() != n {
            return Err(Error::Dimension(format!("input has length {}, expected {n}", x.len())));
        }
        Ok(())
    }

    /// Softmax over the `top_k` largest router logits; ties go to the lower
    /// expert index.
    pub fn gate_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        let GateMode::InputTopK { router, top_k } = &self.gate else {
            return Err(Error::Mode("scalar_alpha"));
        };
        self.check_input(x)?;
        Ok(topk_softmax(&router.tr_matvec(x)?, *top_k))
    }

    /// Coefficients `g_k(x)` applied to the expert deltas.
    pub fn coefficients(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.gate {
            GateMode::ScalarAlpha => {
                self.check_input(x)?;
                Ok(self.bank.routing().to_vec())
            }
            GateMode::InputTopK { .. } => self.gate_weights(x),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.coefficients(x)?;
        let mut h = self.bank.residual().matvec(x)?;
        let s = self.bank.scale();
        for (e, gk) in self.bank.experts().iter().zip(&g) {
            if *gk == 0.0 {
                continue;
            }
            let bx = e.b.matvec(x)?;
            let abx = e.a.matvec(&bx)?;
            h.iter_mut().zip(&abx).for_each(|(h, d)| *h += gk * s * d);
        }
        Ok(h)
    }

    /// Effective dense weight for the scalar gate (`reconstruct` of the bank).
    pub fn dense_weight(&self) -> Result<DenseMatrix> {
        match self.gate {
            GateMode::ScalarAlpha => Ok(reconstruct(&self.bank)),
            GateMode::InputTopK { .. } => Err(Error::Mode("input_topk")),
        }
    }

    /// Gradients of `⟨upstream, forward(x)⟩`. In gated mode the top-k support
    /// is held fixed and `grad_alpha` is zero because `α` does not enter the
    /// output.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<LayerGradients> {
        let (m, _) = self.bank.shape();
        if upstream.len() != m {
            return Err(Error::Dimension(format!(
                "upstream has length {}, expected {m}",
                upstream.len()
            )));
        }
        let g = self.coefficients(x)?;
        let s = self.bank.scale();
        let mut grads = LayerGradients::zeros_like(self);
        let mut grad_g = vec![0.0; g.len()];
        for (k, e) in self.bank.experts().iter().enumerate() {
            let bx = e.b.matvec(x)?;
            let atu = e.a.tr_matvec(upstream)?;
            // ∂/∂g_k of ⟨u, s A_k B_k x⟩
            grad_g[k] = s * dot(&atu, &bx);
            let c = g[k] * s;
            if c != 0.0 {
                let ga = &mut grads.grad_a[k];
                for i in 0..m {
                    for (j, bxj) in bx.iter().enumerate() {
                        ga[(i, j)] = c * upstream[i] * bxj;
                    }
                }
                let gb = &mut grads.grad_b[k];
                for (j, atuj) in atu.iter().enumerate() {
                    for (out, xi) in gb.row_mut(j).iter_mut().zip(x) {
                        *out = c * atuj * xi;
                    }
                }
            }
        }
        match &self.gate {
            GateMode::ScalarAlpha => grads.grad_alpha = grad_g,
            GateMode::InputTopK { .. } => {
                let mean: f64 = g.iter().zip(&grad_g).map(|(a, b)| a * b).sum();
                let grad_router = grads.grad_router.as_mut().expect("gated layer has a router");
                for (k, (&gk, &dk)) in g.iter().zip(&grad_g).enumerate() {
                    if gk == 0.0 {
                        continue;
                    }
                    let dz = gk * (dk - mean);
                    for (i, xi) in x.iter().enumerate() {
                        grad_router[(i, k)] = xi * dz;
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Plain gradient-descent update of every trainable part. The residual is
    /// never touched.
    pub fn sgd_step(&mut self, grads: &LayerGradients, lr: f64) {
        let scalar = matches!(self.gate, GateMode::ScalarAlpha);
        for (e, (ga, gb)) in self
            .bank
            .experts_mut()
            .iter_mut()
            .zip(grads.grad_a.iter().zip(&grads.grad_b))
        {
            e.a.add_scaled(-lr, ga).expect("matching shapes");
            e.b.add_scaled(-lr, gb).expect("matching shapes");
        }
        if scalar {
            for (a, g) in self.bank.routing_mut().iter_mut().zip(&grads.grad_alpha) {
                *a -= lr * g;
            }
        }
        if let (Some(router), Some(g)) = (self.router_mut(), grads.grad_router.as_ref()) {
            router.add_scaled(-lr, g).expect("matching shapes");
        }
    }

    /// Applies a grouping to the bank. Scalar routing rescales moved
    /// components so the output is unchanged. Input-dependent gates have no
    /// constant ratio to rescale by, so components move unscaled and a warning
    /// is returned.
    pub fn regroup(&mut self, pi: &GroupingPolicy) -> Result<Option<String>> {
        match self.gate {
            GateMode::ScalarAlpha => {
                self.bank = regroup_with(&self.bank, pi, Rescale::RoutingRatio)?;
                Ok(None)
            }
            GateMode::InputTopK { .. } => {
                self.bank = regroup_with(&self.bank, pi, Rescale::None)?;
                Ok(Some(
                    "input-gated routing: components regrouped without rescaling; output is not preserved".into(),
                ))
            }
        }
    }
}

pub(crate) fn topk_softmax(logits: &[f64], top_k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let chosen = &order[..top_k.min(logits.len())];
    let zmax = logits[chosen[0]];
    let mut w = vec![0.0; logits.len()];
    let mut total = 0.0;
    for &k in chosen {
        w[k] = (logits[k] - zmax).exp();
        total += w[k];
    }
    for &k in chosen {
        w[k] /= total;
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateModeTag {
    ScalarAlpha,
    InputTopk,
}

/// Contents of `layer.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub gate_mode: GateModeTag,
    pub top_k: Option<usize>,
    /// Router file name relative to the layer directory.
    pub router: Option<String>,
    pub format_version: u32,
}

/// Writes the bank files plus `layer.json` (and `router.bmat` when gated).
pub fn save_layer(layer: &MoeLoraLayer, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    save_bank(&layer.bank, dir)?;
    let manifest = match &layer.gate {
        GateMode::ScalarAlpha => LayerManifest {
            gate_mode: GateModeTag::ScalarAlpha,
            top_k: None,
            router: None,
            format_version: FORMAT_VERSION,
        },
        GateMode::InputTopK { router, top_k } => {
            write_bmat(dir.join("router.bmat"), router)?;
            LayerManifest {
                gate_mode: GateModeTag::InputTopk,
                top_k: Some(*top_k),
                router: Some("router.bmat".into()),
                format_version: FORMAT_VERSION,
            }
        }
    };
    fs::write(dir.join("layer.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Reads a layer directory. A bare bank directory without `layer.json` loads
/// as a scalar-routed layer.
pub fn load_layer(dir: impl AsRef<Path>) -> Result<MoeLoraLayer> {
    let dir = dir.as_ref();
    let bank = load_bank(dir)?;
    let path = dir.join("layer.json");
    if !path.exists() {
        return Ok(MoeLoraLayer::scalar(bank));
    }
    let manifest: LayerManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    match manifest.gate_mode {
        GateModeTag::ScalarAlpha => Ok(MoeLoraLayer::scalar(bank)),
        GateModeTag::InputTopk => {
            let (Some(top_k), Some(router)) = (manifest.top_k, manifest.router) else {
                return Err(Error::Format {
                    path,
                    msg: "input_topk layer needs top_k and router".into(),
                });
            };
            MoeLoraLayer::gated(bank, read_bmat(dir.join(router))?, top_k)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bad::{decompose, ExpertFactors};

    fn w() -> DenseMatrix {
        DenseMatrix::from_fn(5, 4, |i, j| ((3 * i + 5 * j) % 7) as f64 * 0.5 - 1.0)
    }

    #[test]
    fn fresh_scalar_layer_matches_original_weight() {
        let layer = MoeLoraLayer::scalar(decompose(&w(), 2, 2, 1.0).unwrap());
        let x = [0.3, -1.0, 2.0, 0.5];
        let want = w().matvec(&x).unwrap();
        let got = layer.forward(&x).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_routing_leaves_the_residual() {
        let mut bank = decompose(&w(), 2, 1, 1.0).unwrap();
        bank.set_routing(vec![0.0, 0.0]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let want = bank.residual().matvec(&x).unwrap();
        assert_eq!(MoeLoraLayer::scalar(bank).forward(&x).unwrap(), want);
    }

    #[test]
    fn scalar_product_rule_gradients() {
        let (a, b, alpha, x, u) = (1.5, -0.5, 2.0, 3.0, 0.25);
        let bank = ExpertBank::new(
            DenseMatrix::zeros(1, 1),
            vec![ExpertFactors {
                a: DenseMatrix::from_vec(1, 1, vec![a]).unwrap(),
                b: DenseMatrix::from_vec(1, 1, vec![b]).unwrap(),
            }],
            vec![alpha],
            1.0,
        )
        .unwrap();
        let g = MoeLoraLayer::scalar(bank).backward(&[x], &[u]).unwrap();
        assert_eq!(g.grad_a[0][(0, 0)], alpha * b * x * u);
        assert_eq!(g.grad_b[0][(0, 0)], alpha * a * x * u);
        assert_eq!(g.grad_alpha[0], a * b * x * u);
        assert!(g.grad_router.is_none());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layer = MoeLoraLayer::scalar(decompose(&w(), 2, 2, 1.0).unwrap());
        let g = layer.backward(&[1.0, 2.0, 3.0, 4.0], &[0.0; 5]).unwrap();
        assert_eq!(g, LayerGradients::zeros_like(&layer));
    }

    #[test]
    fn topk_softmax_examples() {
        let w = topk_softmax(&[3.0, 1.0, 0.0, -1.0], 2);
        assert!((w[0] - 0.8807970779778823).abs() < 1e-12);
        assert!((w[1] - 0.11920292202211755).abs() < 1e-12);
        assert_eq!(&w[2..], &[0.0, 0.0]);

        assert_eq!(topk_softmax(&[0.5; 4], 4), vec![0.25; 4]);
        assert_eq!(topk_softmax(&[0.1, 2.0, 2.0], 1), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn gate_weights_require_gated_mode() {
        let layer = MoeLoraLayer::scalar(decompose(&w(), 2, 2, 1.0).unwrap());
        assert!(matches!(layer.gate_weights(&[0.0; 4]), Err(Error::Mode(_))));
    }

    #[test]
    fn gated_layer_validation() {
        let bank = decompose(&w(), 2, 2, 1.0).unwrap();
        assert!(MoeLoraLayer::gated(bank.clone(), DenseMatrix::zeros(4, 3), 1).is_err());
        assert!(MoeLoraLayer::gated(bank.clone(), DenseMatrix::zeros(4, 2), 3).is_err());
        assert!(MoeLoraLayer::gated(bank, DenseMatrix::zeros(4, 2), 2).is_ok());
    }

    #[test]
    fn dimension_errors() {
        let layer = MoeLoraLayer::scalar(decompose(&w(), 2, 2, 1.0).unwrap());
        assert!(layer.forward(&[1.0; 3]).is_err());
        assert!(layer.backward(&[1.0; 4], &[1.0; 4]).is_err());
    }

    #[test]
    fn layer_directory_round_trip() {
        let bank = decompose(&w(), 2, 2, 1.0).unwrap();
        let router = DenseMatrix::from_fn(4, 2, |i, j| (i as f64) - (j as f64));
        let layer = MoeLoraLayer::gated(bank, router, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_layer(&layer, dir.path()).unwrap();
        assert_eq!(load_layer(dir.path()).unwrap(), layer);
    }
}
