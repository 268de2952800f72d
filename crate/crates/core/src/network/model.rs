use super::layers::{
    conv3x3_backward, conv3x3_forward, dense_backward, dense_forward, lstm_backward_step,
    lstm_forward_step, maxpool2_forward, tanh, LstmStep,
};
use super::ModelParams;
use crate::data::SequenceExample;
use crate::error::{Error, Result};
use crate::features::{InputFeatures, TargetPosition};
use crate::inference::{nms, NmsConfig};
use crate::map::{GridSpec, StaticMapRaster};
use crate::metrics::ScoredSequence;
use crate::mixture::{
    decomposed_loss_with_grad, realize_params, LossBreakdown, MixtureParams, RawHeadOutput,
};

/// Values per grid cell in the head output: logit, `dmu_x`, `s_x`,
/// `dmu_y`, `s_y`. Cell `j` occupies `out[5 j .. 5 j + 5]`.
pub const HEAD_CHANNELS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
struct CnnCache {
    /// Input of every conv stage, then the flattened output.
    inputs: Vec<Vec<f64>>,
    /// `tanh` activations before pooling.
    activations: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
struct StepCache {
    /// Scaled features, then every embedding activation.
    embedding: Vec<Vec<f64>>,
    /// Head input, then every head layer output.
    head: Vec<Vec<f64>>,
    cnn: Option<CnnCache>,
}

/// Per-step head outputs with the activations needed for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub outputs: Vec<RawHeadOutput>,
    steps: Vec<StepCache>,
    /// `[layer][step]`
    lstm: Vec<Vec<LstmStep>>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Concatenated head input at step `t`: map features then recurrent state.
    pub fn head_input(&self, t: usize) -> &[f64] {
        &self.steps[t].head[0]
    }

    /// Whether both traces made identical max-pool choices at every step.
    pub fn same_pool_selection(&self, other: &ForwardTrace) -> bool {
        self.steps.len() == other.steps.len()
            && self
                .steps
                .iter()
                .zip(&other.steps)
                .all(|(a, b)| match (&a.cnn, &b.cnn) {
                    (Some(a), Some(b)) => a.argmax == b.argmax,
                    _ => false,
                })
    }

    pub fn mixtures(&self, grid: &GridSpec) -> Result<Vec<MixtureParams>> {
        self.outputs
            .iter()
            .map(|raw| realize_params(raw, grid))
            .collect()
    }
}

/// Runs the model over one sequence and keeps the NMS predictions of every
/// step. Targets outside the grid become `None`.
pub fn score_example(
    example: &SequenceExample,
    params: &ModelParams,
    grid: &GridSpec,
    config: &NmsConfig,
) -> Result<ScoredSequence> {
    let trace = forward(&example.features, &example.rasters, params)?;
    let predictions = trace
        .mixtures(grid)?
        .iter()
        .map(|m| nms(m, config))
        .collect();
    let targets = example
        .targets
        .iter()
        .zip(&example.classes)
        .map(|(t, c)| c.map(|_| t.position()))
        .collect();
    Ok(ScoredSequence {
        predictions,
        targets,
    })
}

fn raster_input(raster: &StaticMapRaster, params: &ModelParams) -> Result<Vec<f64>> {
    let cfg = params.config();
    let side = cfg.map_pixels;
    if raster.width() != side || raster.height() != side || raster.cells().len() != 2 * side * side
    {
        return Err(Error::ShapeMismatch(format!(
            "raster is {}x{}, model expects 2x{side}x{side}",
            raster.height(),
            raster.width()
        )));
    }
    Ok(raster.cells().iter().map(|&v| f64::from(v)).collect())
}

fn cnn_forward_cached(
    raster: &StaticMapRaster,
    params: &ModelParams,
    forced: Option<&[Vec<usize>]>,
) -> Result<CnnCache> {
    let p = &params.values;
    let mut x = raster_input(raster, params)?;
    let mut side = params.config().map_pixels;
    let mut cache = CnnCache {
        inputs: Vec::new(),
        activations: Vec::new(),
        argmax: Vec::new(),
    };
    for l in &params.layout().conv {
        let mut z = Vec::new();
        conv3x3_forward(p, l, &x, side, &mut z);
        z.iter_mut().for_each(|v| *v = tanh(*v));
        let (mut pooled, mut arg) = (Vec::new(), Vec::new());
        match forced {
            Some(sel) => {
                arg.clone_from(&sel[cache.argmax.len()]);
                pooled.extend(arg.iter().map(|&i| z[i]));
            }
            None => maxpool2_forward(&z, l.cout, side, &mut pooled, &mut arg),
        }
        cache.inputs.push(std::mem::replace(&mut x, pooled));
        cache.activations.push(z);
        cache.argmax.push(arg);
        side /= 2;
    }
    cache.inputs.push(x);
    Ok(cache)
}

/// Flattened map encoding of one raster (channel-major, row-major).
pub fn cnn_forward(raster: &StaticMapRaster, params: &ModelParams) -> Result<Vec<f64>> {
    Ok(cnn_forward_cached(raster, params, None)?
        .inputs
        .pop()
        .unwrap_or_default())
}

/// Smallest nonzero gap between the winner and the runner-up of any 2x2
/// pooling window of the map encoder. Max pooling is not differentiable
/// where this gap vanishes; finite-difference checks need it to exceed the
/// probe step. Exact ties come from identical receptive fields and move
/// together under any parameter change, so they are ignored.
pub fn pooling_margin(raster: &StaticMapRaster, params: &ModelParams) -> Result<f64> {
    let cache = cnn_forward_cached(raster, params, None)?;
    let mut side = params.config().map_pixels;
    let mut margin = f64::INFINITY;
    for (act, l) in cache.activations.iter().zip(&params.layout().conv) {
        for c in 0..l.cout {
            for y in (0..side).step_by(2) {
                for x in (0..side).step_by(2) {
                    let i0 = c * side * side + y * side + x;
                    let mut w = [act[i0], act[i0 + 1], act[i0 + side], act[i0 + side + 1]];
                    w.sort_by(|a, b| b.total_cmp(a));
                    if let Some(second) = w.iter().find(|&&v| v < w[0]) {
                        margin = margin.min(w[0] - second);
                    }
                }
            }
        }
        side /= 2;
    }
    Ok(margin)
}

fn embed(params: &ModelParams, features: &InputFeatures) -> Result<Vec<Vec<Vec<f64>>>> {
    let scale = params.config().input_scale;
    features
        .steps
        .iter()
        .map(|s| {
            let raw = s.as_array();
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput("input features"));
            }
            let mut acts = vec![raw
                .iter()
                .zip(scale)
                .map(|(v, k)| v * k)
                .collect::<Vec<f64>>()];
            for l in &params.layout().embedding {
                let mut out = Vec::new();
                dense_forward(&params.values, l, acts.last().unwrap(), &mut out);
                out.iter_mut().for_each(|v| *v = tanh(*v));
                acts.push(out);
            }
            Ok(acts)
        })
        .collect()
}

fn run_lstm(params: &ModelParams, embedded: &[Vec<Vec<f64>>]) -> Vec<Vec<LstmStep>> {
    let mut layers: Vec<Vec<LstmStep>> = Vec::new();
    for (li, l) in params.layout().lstm.iter().enumerate() {
        let mut steps = Vec::with_capacity(embedded.len());
        let mut h = vec![0.0; l.hidden];
        let mut c = vec![0.0; l.hidden];
        for t in 0..embedded.len() {
            let x = if li == 0 {
                embedded[t].last().unwrap()
            } else {
                &layers[li - 1][t].h
            };
            let step = lstm_forward_step(&params.values, l, x, &h, &c);
            h.clone_from(&step.h);
            c.clone_from(&step.c);
            steps.push(step);
        }
        layers.push(steps);
    }
    layers
}

/// Top-layer hidden state at every step.
pub fn rnn_forward(features: &InputFeatures, params: &ModelParams) -> Result<Vec<Vec<f64>>> {
    let embedded = embed(params, features)?;
    let mut layers = run_lstm(params, &embedded);
    Ok(layers
        .pop()
        .map(|top| top.into_iter().map(|s| s.h).collect())
        .unwrap_or_default())
}

fn head_forward(params: &ModelParams, input: Vec<f64>) -> (Vec<Vec<f64>>, RawHeadOutput) {
    let head = &params.layout().head;
    let mut acts = vec![input];
    for (i, l) in head.iter().enumerate() {
        let mut out = Vec::new();
        dense_forward(&params.values, l, acts.last().unwrap(), &mut out);
        if i + 1 < head.len() {
            out.iter_mut().for_each(|v| *v = tanh(*v));
        }
        acts.push(out);
    }
    let out = acts.last().unwrap();
    let k = out.len() / HEAD_CHANNELS;
    let mut raw = RawHeadOutput::zeros(k);
    for (j, cell) in out.chunks_exact(HEAD_CHANNELS).enumerate() {
        raw.logits[j] = cell[0];
        raw.dmu_x[j] = cell[1];
        raw.s_x[j] = cell[2];
        raw.dmu_y[j] = cell[3];
        raw.s_y[j] = cell[4];
    }
    (acts, raw)
}

fn assemble(
    features: &InputFeatures,
    params: &ModelParams,
    mut map_features: Vec<Vec<f64>>,
    mut cnn: Vec<Option<CnnCache>>,
) -> Result<ForwardTrace> {
    let embedded = embed(params, features)?;
    let lstm = run_lstm(params, &embedded);
    let top = lstm.last().expect("at least one recurrent layer");
    let want = params.config().cnn_output_size();
    let mut outputs = Vec::with_capacity(features.len());
    let mut steps = Vec::with_capacity(features.len());
    for (t, embedding) in embedded.into_iter().enumerate() {
        let mut input = std::mem::take(&mut map_features[t]);
        if input.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "map feature of length {} at step {t}, expected {want}",
                input.len()
            )));
        }
        input.extend_from_slice(&top[t].h);
        let (head, raw) = head_forward(params, input);
        outputs.push(raw);
        steps.push(StepCache {
            embedding,
            head,
            cnn: cnn[t].take(),
        });
    }
    Ok(ForwardTrace {
        outputs,
        steps,
        lstm,
    })
}

/// Runs the full model over a sequence.
pub fn forward(
    features: &InputFeatures,
    rasters: &[StaticMapRaster],
    params: &ModelParams,
) -> Result<ForwardTrace> {
    if rasters.len() != features.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rasters for {} feature steps",
            rasters.len(),
            features.len()
        )));
    }
    forward_impl(features, rasters, params, None)
}

fn forward_impl(
    features: &InputFeatures,
    rasters: &[StaticMapRaster],
    params: &ModelParams,
    selection: Option<&ForwardTrace>,
) -> Result<ForwardTrace> {
    let mut feats = Vec::with_capacity(rasters.len());
    let mut caches = Vec::with_capacity(rasters.len());
    for (t, r) in rasters.iter().enumerate() {
        let forced = selection
            .and_then(|s| s.steps.get(t))
            .and_then(|c| c.cnn.as_ref())
            .map(|c| c.argmax.as_slice());
        let mut cache = cnn_forward_cached(r, params, forced)?;
        feats.push(cache.inputs.pop().unwrap_or_default());
        caches.push(Some(cache));
    }
    assemble(features, params, feats, caches)
}

/// [`forward`] with every max-pool window forced to pick the element chosen
/// in `selection`, a full trace of the same sequence. Where no choice
/// changes this equals [`forward`]; elsewhere it continues the selected
/// branch smoothly, which is what finite differences across a pooling tie
/// must be compared against.
pub fn forward_with_pool_selection(
    features: &InputFeatures,
    rasters: &[StaticMapRaster],
    params: &ModelParams,
    selection: &ForwardTrace,
) -> Result<ForwardTrace> {
    if rasters.len() != features.len()
        || selection.steps.len() != rasters.len()
        || selection.steps.iter().any(|s| s.cnn.is_none())
    {
        return Err(Error::ShapeMismatch(
            "pool selection must come from a full trace of the same sequence".into(),
        ));
    }
    forward_impl(features, rasters, params, Some(selection))
}

/// Like [`forward`] with the map encoding already computed for every
/// step. The returned trace cannot backpropagate into the CNN.
pub fn forward_with_map_features(
    features: &InputFeatures,
    map_features: &[Vec<f64>],
    params: &ModelParams,
) -> Result<ForwardTrace> {
    if map_features.len() != features.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} map features for {} feature steps",
            map_features.len(),
            features.len()
        )));
    }
    assemble(
        features,
        params,
        map_features.to_vec(),
        vec![None; features.len()],
    )
}

/// Decomposed loss summed over all steps with a class; steps whose class is
/// `None` (target outside the grid) are skipped.
pub fn sequence_loss(
    trace: &ForwardTrace,
    targets: &[TargetPosition],
    classes: &[Option<usize>],
    grid: &GridSpec,
    gamma: f64,
) -> Result<LossBreakdown> {
    check_lengths(trace.len(), targets.len(), classes.len())?;
    let mut total = LossBreakdown::default();
    for ((raw, target), class) in trace.outputs.iter().zip(targets).zip(classes) {
        if let Some(z) = *class {
            total += decomposed_loss_with_grad(raw, grid, target.position(), z, gamma)?.0;
        }
    }
    Ok(total)
}

fn check_lengths(steps: usize, targets: usize, classes: usize) -> Result<()> {
    if steps != targets || steps != classes {
        return Err(Error::ShapeMismatch(format!(
            "{steps} steps, {targets} targets, {classes} classes"
        )));
    }
    Ok(())
}

fn tanh_backward(da: &mut [f64], a: &[f64]) {
    for (d, &a) in da.iter_mut().zip(a) {
        *d *= 1.0 - a * a;
    }
}

/// Adds `weight * d(sequence loss)/d(params)` to `grad` and returns the
/// unweighted sequence loss.
fn accumulate_sequence(
    example: &SequenceExample,
    params: &ModelParams,
    grid: &GridSpec,
    gamma: f64,
    weight: f64,
    grad: &mut [f64],
) -> Result<LossBreakdown> {
    check_lengths(
        example.features.len(),
        example.targets.len(),
        example.classes.len(),
    )?;
    let trace = forward(&example.features, &example.rasters, params)?;
    let p = &params.values;
    let layout = params.layout();
    let n = trace.len();
    let cnn_len = params.config().cnn_output_size();
    let top_hidden = layout.lstm.last().unwrap().hidden;

    let mut loss = LossBreakdown::default();
    // Gradient on the top LSTM hidden state from the head, per step.
    let mut dh_above: Vec<Vec<f64>> = vec![vec![0.0; top_hidden]; n];
    for t in 0..n {
        let Some(z) = example.classes[t] else {
            continue;
        };
        let (l, g) = decomposed_loss_with_grad(
            &trace.outputs[t],
            grid,
            example.targets[t].position(),
            z,
            gamma,
        )?;
        loss += l;
        let mut dz = vec![0.0; HEAD_CHANNELS * g.k()];
        for (j, cell) in dz.chunks_exact_mut(HEAD_CHANNELS).enumerate() {
            cell.copy_from_slice(&[g.logits[j], g.dmu_x[j], g.s_x[j], g.dmu_y[j], g.s_y[j]]);
            cell.iter_mut().for_each(|v| *v *= weight);
        }
        let acts = &trace.steps[t].head;
        for (i, l) in layout.head.iter().enumerate().rev() {
            let mut dx = vec![0.0; l.inputs];
            dense_backward(p, grad, l, &acts[i], &dz, Some(&mut dx));
            if i > 0 {
                tanh_backward(&mut dx, &acts[i]);
            }
            dz = dx;
        }
        let (dmap, dh) = dz.split_at(cnn_len);
        dh_above[t].copy_from_slice(dh);
        if let Some(cache) = &trace.steps[t].cnn {
            cnn_backward(params, cache, dmap, grad);
        }
    }

    // Backprop through time, top layer first.
    for (li, l) in layout.lstm.iter().enumerate().rev() {
        let mut below = vec![vec![0.0; l.inputs]; n];
        let mut dh_next = vec![0.0; l.hidden];
        let mut dc = vec![0.0; l.hidden];
        for t in (0..n).rev() {
            let dh: Vec<f64> = dh_above[t]
                .iter()
                .zip(&dh_next)
                .map(|(a, b)| a + b)
                .collect();
            let dinput = lstm_backward_step(p, grad, l, &trace.lstm[li][t], &dh, &mut dc);
            below[t].copy_from_slice(&dinput[..l.inputs]);
            dh_next.copy_from_slice(&dinput[l.inputs..]);
        }
        dh_above = below;
    }

    for (t, mut da) in dh_above.into_iter().enumerate() {
        let acts = &trace.steps[t].embedding;
        for (i, l) in layout.embedding.iter().enumerate().rev() {
            tanh_backward(&mut da, &acts[i + 1]);
            let mut dx = vec![0.0; l.inputs];
            dense_backward(
                p,
                grad,
                l,
                &acts[i],
                &da,
                if i > 0 { Some(&mut dx) } else { None },
            );
            da = dx;
        }
    }
    Ok(loss)
}

fn cnn_backward(params: &ModelParams, cache: &CnnCache, dflat: &[f64], grad: &mut [f64]) {
    let p = &params.values;
    let convs = &params.layout().conv;
    let mut dpooled = dflat.to_vec();
    let mut side = params.config().map_pixels >> convs.len();
    for (s, l) in convs.iter().enumerate().rev() {
        side *= 2;
        let act = &cache.activations[s];
        let mut dz = vec![0.0; act.len()];
        for (&idx, &d) in cache.argmax[s].iter().zip(&dpooled) {
            dz[idx] += d;
        }
        tanh_backward(&mut dz, act);
        if s > 0 {
            let mut din = vec![0.0; cache.inputs[s].len()];
            conv3x3_backward(p, grad, l, &cache.inputs[s], side, &dz, Some(&mut din));
            dpooled = din;
        } else {
            conv3x3_backward(p, grad, l, &cache.inputs[s], side, &dz, None);
        }
    }
}

/// Mean sequence loss over `batch` and its exact gradient with respect to
/// every parameter.
pub fn gradients(
    batch: &[&SequenceExample],
    params: &ModelParams,
    grid: &GridSpec,
    gamma: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if grid.k() * HEAD_CHANNELS != *params.config().head_sizes.last().unwrap() {
        return Err(Error::ShapeMismatch(format!(
            "grid of {} cells for a head of {} outputs",
            grid.k(),
            params.config().head_sizes.last().unwrap()
        )));
    }
    let weight = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = LossBreakdown::default();
    for example in batch {
        match accumulate_sequence(example, params, grid, gamma, weight, &mut grad) {
            Ok(l) => loss += l.scaled(weight),
            Err(Error::NonFiniteInput("head output")) => {
                return Err(Error::NonFiniteGradient {
                    loss: f64::NAN,
                    bad: grad.len(),
                    total: grad.len(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    let bad = grad.iter().filter(|g| !g.is_finite()).count();
    if bad > 0 || !loss.total.is_finite() {
        return Err(Error::NonFiniteGradient {
            loss: loss.total,
            bad,
            total: grad.len(),
        });
    }
    Ok((loss, grad))
}
