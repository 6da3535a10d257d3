use crate::embedding::{combined_loss, hinge, CrossmodalTriplet, LossConfig, Modality, Tagged, Triplet};
use crate::error::{Error, Result};
use crate::model::{EncoderParams, Forward};
use crate::scalar::{squared_distance, Scalar};

/// Transfer triplets of one optimization step.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum TransferSet {
    #[default]
    None,
    /// Audio-only triplets (relative distance or clustering structure).
    Audio(Vec<Triplet>),
    /// Crossmodal triplets; visual members index the frozen source table.
    Crossmodal(Vec<CrossmodalTriplet>),
}

impl TransferSet {
    pub fn len(&self) -> usize {
        match self {
            TransferSet::None => 0,
            TransferSet::Audio(t) => t.len(),
            TransferSet::Crossmodal(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Combined objective with its triplet sets held fixed.
///
/// `inputs` are mean-pooled audio feature vectors; triplet indices refer to
/// them. `source` holds frozen source-modality embeddings, read only by
/// crossmodal triplets and never differentiated.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a, T> {
    pub inputs: &'a [Vec<T>],
    pub source: &'a [Vec<T>],
    pub primary: &'a [Triplet],
    pub transfer: &'a TransferSet,
    pub loss: LossConfig<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub primary: T,
    pub transfer: T,
    pub total: T,
}

struct Embedded<T> {
    slot: Vec<Option<usize>>,
    forwards: Vec<(usize, Forward<T>)>,
}

impl<T: Scalar> Embedded<T> {
    fn new(params: &EncoderParams<T>, obj: &Objective<'_, T>) -> Result<Self> {
        let n = obj.inputs.len();
        let mut used = vec![false; n];
        let mut mark = |i: usize| -> Result<()> {
            *used.get_mut(i).ok_or(Error::IndexOutOfRange { index: i, len: n })? = true;
            Ok(())
        };
        for t in obj.primary {
            mark(t.anchor)?;
            mark(t.positive)?;
            mark(t.negative)?;
        }
        match obj.transfer {
            TransferSet::None => {}
            TransferSet::Audio(ts) => {
                for t in ts {
                    mark(t.anchor)?;
                    mark(t.positive)?;
                    mark(t.negative)?;
                }
            }
            TransferSet::Crossmodal(ts) => {
                for t in ts {
                    for tag in [t.anchor, t.positive, t.negative] {
                        match tag.modality {
                            Modality::Audio => mark(tag.index)?,
                            Modality::Visual => {
                                if tag.index >= obj.source.len() {
                                    return Err(Error::IndexOutOfRange { index: tag.index, len: obj.source.len() });
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut slot = vec![None; n];
        let mut forwards = Vec::new();
        for (i, _) in used.iter().enumerate().filter(|(_, &u)| u) {
            slot[i] = Some(forwards.len());
            forwards.push((i, params.forward(&obj.inputs[i])?));
        }
        Ok(Self { slot, forwards })
    }

    fn audio(&self, i: usize) -> &[T] {
        self.forwards[self.slot[i].expect("marked sample")].1.embedding.as_slice()
    }
}

/// Accumulates `scale * d hinge / d(a, p, n)` for one active triplet.
fn hinge_grads<T: Scalar>(a: &[T], p: &[T], n: &[T], scale: T, ga: Option<&mut [T]>, gp: Option<&mut [T]>, gn: Option<&mut [T]>) {
    let d_ap = squared_distance(a, p).sqrt();
    let d_an = squared_distance(a, n).sqrt();
    // unit directions; zero at coincident points
    let inv = |d: T| if d > T::zero() { scale / d } else { T::zero() };
    let (s_ap, s_an) = (inv(d_ap), inv(d_an));
    if let Some(ga) = ga {
        for k in 0..a.len() {
            ga[k] = ga[k] + (a[k] - p[k]) * s_ap - (a[k] - n[k]) * s_an;
        }
    }
    if let Some(gp) = gp {
        for k in 0..a.len() {
            gp[k] = gp[k] - (a[k] - p[k]) * s_ap;
        }
    }
    if let Some(gn) = gn {
        for k in 0..a.len() {
            gn[k] = gn[k] + (a[k] - n[k]) * s_an;
        }
    }
}

/// Adds one triplet's hinge gradient into the per-sample embedding gradients.
/// Members without a slot are frozen and skipped.
fn accumulate<T: Scalar>(
    grads: &mut [Vec<T>],
    members: [Option<usize>; 3],
    values: [&[T]; 3],
    scale: T,
) {
    let dim = values[0].len();
    let mut scratch = [vec![T::zero(); dim], vec![T::zero(); dim], vec![T::zero(); dim]];
    {
        let [sa, sp, sn] = &mut scratch;
        hinge_grads(
            values[0],
            values[1],
            values[2],
            scale,
            members[0].map(|_| sa.as_mut_slice()),
            members[1].map(|_| sp.as_mut_slice()),
            members[2].map(|_| sn.as_mut_slice()),
        );
    }
    for (m, s) in members.iter().zip(&scratch) {
        if let Some(slot) = m {
            for (g, &x) in grads[*slot].iter_mut().zip(s) {
                *g = *g + x;
            }
        }
    }
}

impl<'a, T: Scalar> Objective<'a, T> {
    fn evaluate(&self, params: &EncoderParams<T>, want_grads: bool) -> Result<(LossBreakdown<T>, Option<EncoderParams<T>>)> {
        let emb = Embedded::new(params, self)?;
        let dim = params.spec.embedding_dim;
        let mut grad_e: Vec<Vec<T>> = if want_grads { vec![vec![T::zero(); dim]; emb.forwards.len()] } else { Vec::new() };

        let mut primary = T::zero();
        if !self.primary.is_empty() {
            let scale = T::one() / T::from_count(self.primary.len());
            for t in self.primary {
                let (a, p, n) = (emb.audio(t.anchor), emb.audio(t.positive), emb.audio(t.negative));
                let h = hinge(squared_distance(a, p).sqrt(), squared_distance(a, n).sqrt(), self.loss.margin);
                primary = primary + h;
                if want_grads && h > T::zero() {
                    let members = [emb.slot[t.anchor], emb.slot[t.positive], emb.slot[t.negative]];
                    accumulate(&mut grad_e, members, [a, p, n], scale);
                }
            }
            primary = primary / T::from_count(self.primary.len());
        }

        let mut transfer = T::zero();
        let count = self.transfer.len();
        if count > 0 {
            let scale = self.loss.lambda / T::from_count(count);
            let margin = self.loss.transfer_margin;
            let grads_on = want_grads && scale != T::zero();
            match self.transfer {
                TransferSet::None => {}
                TransferSet::Audio(ts) => {
                    for t in ts {
                        let (a, p, n) = (emb.audio(t.anchor), emb.audio(t.positive), emb.audio(t.negative));
                        let h = hinge(squared_distance(a, p).sqrt(), squared_distance(a, n).sqrt(), margin);
                        transfer = transfer + h;
                        if grads_on && h > T::zero() {
                            let members = [emb.slot[t.anchor], emb.slot[t.positive], emb.slot[t.negative]];
                            accumulate(&mut grad_e, members, [a, p, n], scale);
                        }
                    }
                }
                TransferSet::Crossmodal(ts) => {
                    let value = |tag: Tagged| match tag.modality {
                        Modality::Audio => emb.audio(tag.index),
                        Modality::Visual => self.source[tag.index].as_slice(),
                    };
                    let slot = |tag: Tagged| match tag.modality {
                        Modality::Audio => emb.slot[tag.index],
                        Modality::Visual => None,
                    };
                    for t in ts {
                        let (a, p, n) = (value(t.anchor), value(t.positive), value(t.negative));
                        if a.len() != dim || p.len() != dim || n.len() != dim {
                            return Err(Error::DimensionMismatch { expected: dim, found: a.len().min(p.len()).min(n.len()) });
                        }
                        let h = hinge(squared_distance(a, p).sqrt(), squared_distance(a, n).sqrt(), margin);
                        transfer = transfer + h;
                        if grads_on && h > T::zero() {
                            let members = [slot(t.anchor), slot(t.positive), slot(t.negative)];
                            accumulate(&mut grad_e, members, [a, p, n], scale);
                        }
                    }
                }
            }
            transfer = transfer / T::from_count(count);
        }

        let breakdown = LossBreakdown { primary, transfer, total: combined_loss(primary, transfer, self.loss.lambda) };
        if !want_grads {
            return Ok((breakdown, None));
        }
        let mut grads = EncoderParams::zeros(params.spec);
        for ((_, fwd), g) in emb.forwards.iter().zip(&grad_e) {
            if g.iter().any(|x| *x != T::zero()) {
                params.backward(fwd, g, &mut grads);
            }
        }
        Ok((breakdown, Some(grads)))
    }

    /// Loss only.
    pub fn loss(&self, params: &EncoderParams<T>) -> Result<LossBreakdown<T>> {
        Ok(self.evaluate(params, false)?.0)
    }
}

/// Combined loss `primary + lambda * transfer` and its exact gradient with
/// respect to the encoder parameters.
///
/// Inactive triplets (hinge exactly zero) contribute no gradient, and the
/// frozen source embeddings are treated as constants.
pub fn loss_and_gradients<T: Scalar>(
    params: &EncoderParams<T>,
    objective: &Objective<'_, T>,
) -> Result<(LossBreakdown<T>, EncoderParams<T>)> {
    let (loss, grads) = objective.evaluate(params, true)?;
    Ok((loss, grads.expect("gradients requested")))
}
