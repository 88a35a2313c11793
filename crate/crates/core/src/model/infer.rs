//! Inference entry points: the per-operation API on plain values and the
//! per-frame segmentation step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use ddmem_tensor::{Graph, Tensor, Var};

use super::{window_cells, Bank, Model, QueryVars};
use crate::dataset::{BoxRegion, Mask, RgbImage};
use crate::error::{validation, Error, Result};
use crate::memory::{feature_size, init_memory, memory_footprint, update_memory, FeatureMap, MemoryState};

/// Groundtruth assistance during inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OracleMode {
    #[default]
    None,
    /// Restrict matching to the groundtruth box.
    Box,
    /// Update memory with the groundtruth mask instead of the prediction.
    Mask,
    BoxMask,
}

impl OracleMode {
    pub const ALL: [OracleMode; 4] = [Self::None, Self::Box, Self::Mask, Self::BoxMask];

    pub fn uses_box(self) -> bool {
        matches!(self, Self::Box | Self::BoxMask)
    }

    pub fn uses_mask(self) -> bool {
        matches!(self, Self::Mask | Self::BoxMask)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Box => "box",
            Self::Mask => "mask",
            Self::BoxMask => "box+mask",
        }
    }
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| validation(format!("unknown oracle mode {s:?} (expected none, box, mask or box+mask)")))
    }
}

impl TryFrom<String> for OracleMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OracleMode> for String {
    fn from(m: OracleMode) -> String {
        m.as_str().to_string()
    }
}

/// Which memory banks the matcher may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BankCombo {
    pub reference: bool,
    pub global: bool,
    pub local: bool,
}

impl BankCombo {
    pub const FULL: BankCombo = BankCombo { reference: true, global: true, local: true };

    /// Every non-empty combination, single banks first.
    pub fn all() -> [BankCombo; 7] {
        let c = |reference, global, local| BankCombo { reference, global, local };
        [
            c(true, false, false),
            c(false, true, false),
            c(false, false, true),
            c(true, true, false),
            c(true, false, true),
            c(false, true, true),
            c(true, true, true),
        ]
    }

    pub fn new(reference: bool, global: bool, local: bool) -> Result<Self> {
        if !(reference || global || local) {
            return Err(validation("at least one memory bank must be enabled"));
        }
        Ok(Self { reference, global, local })
    }

    pub fn banks(self) -> Vec<Bank> {
        let mut out = Vec::with_capacity(3);
        if self.reference {
            out.push(Bank::Reference);
        }
        if self.global {
            out.push(Bank::Global);
        }
        if self.local {
            out.push(Bank::Local);
        }
        out
    }

    pub fn count(self) -> usize {
        self.banks().len()
    }

    /// `R`, `G+L`, `R+G+L`, ...
    pub fn label(self) -> String {
        let names: Vec<&str> = self
            .banks()
            .into_iter()
            .map(|b| match b {
                Bank::Reference => "R",
                Bank::Global => "G",
                Bank::Local => "L",
            })
            .collect();
        names.join("+")
    }
}

impl Default for BankCombo {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for BankCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Accepts any spelling made of the letters r, g, l with optional `+` or
/// `,` separators: `rgl`, `r+l`, `R,G`.
impl FromStr for BankCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut r, mut g, mut l) = (false, false, false);
        for ch in s.chars() {
            match ch.to_ascii_lowercase() {
                'r' if !r => r = true,
                'g' if !g => g = true,
                'l' if !l => l = true,
                '+' | ',' | ' ' => {}
                _ => return Err(validation(format!("bad bank combination {s:?} (use letters r, g, l)"))),
            }
        }
        Self::new(r, g, l)
    }
}

impl TryFrom<String> for BankCombo {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BankCombo> for String {
    fn from(c: BankCombo) -> String {
        c.label()
    }
}

/// Skip features kept for the decoder, with the source image size.
#[derive(Clone, Debug, PartialEq)]
pub struct LowLevel {
    pub skips: [Tensor; 3],
    pub height: usize,
    pub width: usize,
}

/// Matched feature `Γ`, same shape as the query feature.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchOutput {
    pub gamma: FeatureMap,
}

/// Fused per-pixel distribution over background and objects.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub ids: Vec<u16>,
    /// `probabilities[0]` is background, `probabilities[i]` is `ids[i-1]`.
    pub probabilities: Vec<Vec<f64>>,
    /// Log-odds entering the final softmax, same layout.
    pub logits: Vec<Vec<f64>>,
    pub mask: Mask,
}

/// Per-object memory states of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracker {
    pub states: BTreeMap<u16, MemoryState>,
    pub frames: usize,
}

impl Tracker {
    pub fn footprint(&self) -> usize {
        self.states.values().map(memory_footprint).sum()
    }

    pub fn objects(&self) -> BTreeSet<u16> {
        self.states.keys().copied().collect()
    }
}

const CLAMP: f64 = 1e-7;

/// Soft aggregation: background odds are the product of per-object
/// background probabilities, then a softmax over log-odds normalises the
/// pixel. Ties resolve to the earlier channel, background first.
pub fn soft_aggregate(ids: &[u16], probs: &[Vec<f64>], width: usize, height: usize) -> Result<SegmentationResult> {
    if ids.is_empty() || ids.len() != probs.len() {
        return Err(validation("soft aggregation needs one probability map per object"));
    }
    let n = width * height;
    for p in probs {
        if p.len() != n {
            return Err(validation(format!("probability map of {} values for a {width}x{height} frame", p.len())));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(validation("probabilities must lie in [0, 1]"));
        }
    }
    let k = ids.len() + 1;
    let mut probabilities = vec![vec![0.0; n]; k];
    let mut logits = vec![vec![0.0; n]; k];
    let mut labels = vec![0u16; n];
    let mut odds = vec![0.0; k];
    for px in 0..n {
        odds[0] = probs.iter().map(|p| 1.0 - p[px]).product();
        for (i, p) in probs.iter().enumerate() {
            odds[i + 1] = p[px];
        }
        let mut best = 0;
        let mut max = f64::NEG_INFINITY;
        for (c, o) in odds.iter_mut().enumerate() {
            let e = o.clamp(CLAMP, 1.0 - CLAMP);
            let l = (e / (1.0 - e)).ln();
            logits[c][px] = l;
            if l > max {
                max = l;
                best = c;
            }
        }
        let total: f64 = (0..k).map(|c| (logits[c][px] - max).exp()).sum();
        for c in 0..k {
            probabilities[c][px] = (logits[c][px] - max).exp() / total;
        }
        labels[px] = if best == 0 { 0 } else { ids[best - 1] };
    }
    let mask = Mask::from_labels(width, height, labels)?;
    Ok(SegmentationResult { ids: ids.to_vec(), probabilities, logits, mask })
}

fn check_image(image: &RgbImage) -> Result<()> {
    if image.width() == 0 || image.height() == 0 {
        return Err(validation("image must have non-zero size"));
    }
    Ok(())
}

fn bank_vars(g: &mut Graph, state: &MemoryState, combo: BankCombo) -> Vec<(Bank, Var)> {
    combo
        .banks()
        .into_iter()
        .map(|b| {
            let map = match b {
                Bank::Reference => &state.reference,
                Bank::Global => &state.global,
                Bank::Local => &state.local,
            };
            (b, g.constant(map.tensor().clone()))
        })
        .collect()
}

/// Active query cells for a pixel window, `None` when every cell is active.
fn active_cells(window: &BoxRegion, h: usize, w: usize) -> Result<Option<Vec<bool>>> {
    if window.is_empty() {
        return Err(validation("empty search window"));
    }
    let cells = window_cells(window, h, w);
    if !cells.iter().any(|&c| c) {
        return Err(validation("search window lies outside the frame"));
    }
    Ok(if cells.iter().all(|&c| c) { None } else { Some(cells) })
}

impl Model {
    fn query_graph(&self, g: &mut Graph, image: &RgbImage) -> QueryVars {
        let x = g.constant(Self::image_tensor(image));
        self.query_vars(g, x)
    }

    pub fn encode_query(&self, image: &RgbImage) -> Result<(FeatureMap, LowLevel)> {
        check_image(image)?;
        let mut g = Graph::new();
        let q = self.query_graph(&mut g, image);
        let skips = q.skips.map(|v| g.value(v).clone());
        let f = FeatureMap::new(g.value(q.feature).clone())?;
        Ok((f, LowLevel { skips, height: image.height(), width: image.width() }))
    }

    pub fn encode_memory(&self, image: &RgbImage, mask: &Mask, object: u16) -> Result<FeatureMap> {
        check_image(image)?;
        if (mask.width(), mask.height()) != (image.width(), image.height()) {
            return Err(validation(format!(
                "mask {}x{} does not match image {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            )));
        }
        let mut g = Graph::new();
        let q = self.query_graph(&mut g, image);
        let m = self.memory_var(&mut g, &q, mask, object);
        FeatureMap::new(g.value(m).clone())
    }

    /// Attention of the query over the enabled banks, optionally restricted
    /// to the query cells overlapping a pixel window.
    pub fn match_memory(
        &self,
        query: &FeatureMap,
        state: &MemoryState,
        combo: BankCombo,
        window: Option<&BoxRegion>,
    ) -> Result<MatchOutput> {
        let (c, h, w) = query.shape();
        if c != self.config.channels {
            return Err(validation(format!("query has {c} channels, model expects {}", self.config.channels)));
        }
        for bank in [&state.reference, &state.global, &state.local] {
            if bank.shape() != (c, h, w) {
                return Err(validation(format!("memory bank {:?} vs query {:?}", bank.shape(), (c, h, w))));
            }
        }
        let active = window.map(|b| active_cells(b, h, w)).transpose()?.flatten();
        let mut g = Graph::new();
        let qv = g.constant(query.tensor().clone());
        let banks = bank_vars(&mut g, state, combo);
        let out = self.match_var(&mut g, qv, &banks, active.as_deref());
        Ok(MatchOutput { gamma: FeatureMap::new(g.value(out).clone())? })
    }

    /// Full-resolution `[H, W]` logits for one object.
    pub fn decode(&self, matched: &MatchOutput, low: &LowLevel) -> Result<Tensor> {
        let (c, h, w) = matched.gamma.shape();
        let (eh, ew) = feature_size(low.height, low.width, super::STRIDE);
        if c != self.config.channels || (h, w) != (eh, ew) {
            return Err(validation(format!(
                "matched feature {:?} does not fit a {}x{} image",
                (c, h, w),
                low.width,
                low.height
            )));
        }
        for (skip, want) in low.skips.iter().zip(self.config.encoder_widths) {
            if skip.ndim() != 3 || skip.dims3().0 != want {
                return Err(validation(format!("skip feature {:?} expected {want} channels", skip.shape())));
            }
        }
        let mut g = Graph::new();
        let gamma = g.constant(matched.gamma.tensor().clone());
        let skips = [0, 1, 2].map(|i| g.constant(low.skips[i].clone()));
        let out = self.decode_var(&mut g, gamma, &skips, low.height, low.width);
        Tensor::new(&[low.height, low.width], g.value(out).data().to_vec()).map_err(|e| validation(e.to_string()))
    }

    /// Starts per-object memory from the first frame and its groundtruth.
    pub fn init_tracker(&self, image: &RgbImage, mask: &Mask, objects: &BTreeSet<u16>) -> Result<Tracker> {
        check_image(image)?;
        if (mask.width(), mask.height()) != (image.width(), image.height()) {
            return Err(validation("first-frame mask does not match the image"));
        }
        if objects.is_empty() {
            return Err(Error::Protocol("no objects to track".into()));
        }
        if objects.len() > self.config.max_objects {
            return Err(Error::Unsupported(format!(
                "{} objects exceed the model capacity of {}",
                objects.len(),
                self.config.max_objects
            )));
        }
        let mut g = Graph::new();
        let q = self.query_graph(&mut g, image);
        let mut states = BTreeMap::new();
        for &id in objects {
            if mask.count(id) == 0 {
                return Err(Error::Protocol(format!("object {id} has no pixels in the first-frame mask")));
            }
            let m = self.memory_var(&mut g, &q, mask, id);
            states.insert(id, init_memory(FeatureMap::new(g.value(m).clone())?)?);
        }
        Ok(Tracker { states, frames: 1 })
    }

    /// Segments one frame and returns the advanced tracker.
    ///
    /// `gt` is read only by oracle modes. Under a box oracle an object that
    /// is absent from the groundtruth gets probability zero everywhere.
    pub fn segment_frame(
        &self,
        tracker: &Tracker,
        image: &RgbImage,
        oracle: OracleMode,
        gt: Option<&Mask>,
        combo: BankCombo,
    ) -> Result<(SegmentationResult, Tracker)> {
        check_image(image)?;
        if tracker.states.is_empty() {
            return Err(Error::Protocol("memory is not initialised".into()));
        }
        let (width, height) = (image.width(), image.height());
        let gt = match (oracle, gt) {
            (OracleMode::None, _) => None,
            (_, None) => return Err(validation(format!("oracle mode {oracle} needs groundtruth"))),
            (_, Some(m)) if (m.width(), m.height()) != (width, height) => {
                return Err(validation("groundtruth does not match the image"));
            }
            (_, Some(m)) => Some(m),
        };
        let (c, h, w) = tracker.states.values().next().expect("non-empty").local.shape();
        if (c, h, w) != (self.config.channels, height.div_ceil(super::STRIDE), width.div_ceil(super::STRIDE)) {
            return Err(validation("frame size differs from the size the memory was built with"));
        }

        let mut g = Graph::new();
        let q = self.query_graph(&mut g, image);
        let ids: Vec<u16> = tracker.states.keys().copied().collect();
        let mut probs = Vec::with_capacity(ids.len());
        for (&id, state) in &tracker.states {
            let window = match gt.filter(|_| oracle.uses_box()) {
                Some(m) => match m.bbox(id) {
                    Some(b) => Some(active_cells(&b, h, w)?),
                    None => {
                        probs.push(vec![0.0; width * height]);
                        continue;
                    }
                },
                None => None,
            };
            let banks = bank_vars(&mut g, state, combo);
            let gamma = self.match_var(&mut g, q.feature, &banks, window.flatten().as_deref());
            let logits = self.decode_var(&mut g, gamma, &q.skips, height, width);
            probs.push(g.value(logits).data().iter().map(|&l| ddmem_tensor::kernels::sigmoid(l)).collect());
        }
        let result = soft_aggregate(&ids, &probs, width, height)?;

        let mut states = BTreeMap::new();
        for (&id, state) in &tracker.states {
            let source = match gt.filter(|_| oracle.uses_mask()) {
                Some(m) => m,
                None => &result.mask,
            };
            let f = self.memory_var(&mut g, &q, source, id);
            let f = FeatureMap::new(g.value(f).clone())?;
            states.insert(id, update_memory(state, f, &self.compressor, &self.store)?);
        }
        Ok((result, Tracker { states, frames: tracker.frames + 1 }))
    }
}
