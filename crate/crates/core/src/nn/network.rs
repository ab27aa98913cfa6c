use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::kernels::{self, ConvShape};
use super::model::*;

/// Activations retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Tensor,
    pub penultimate: Tensor,
    descriptor: ArchDescriptor,
    input: Tensor,
    act1: Vec<f64>,
    pool1: Vec<f64>,
    act2: Vec<f64>,
    pool2: Vec<f64>,
    conv3: Vec<f64>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }
}

struct Layout {
    g: Geometry,
    conv1: ConvShape,
    conv2: ConvShape,
    c1_len: usize,
    p1_len: usize,
    c2_len: usize,
    p2_len: usize,
}

fn layout(d: &ArchDescriptor) -> Result<Layout> {
    let g = d.validate()?;
    let [c1, c2, _] = d.conv_widths;
    Ok(Layout {
        g,
        conv1: ConvShape {
            cin: 1,
            cout: c1,
            side: d.input_side,
            k: d.kernel,
        },
        conv2: ConvShape {
            cin: c1,
            cout: c2,
            side: g.pool1_side,
            k: d.kernel,
        },
        c1_len: c1 * g.conv1_side * g.conv1_side,
        p1_len: c1 * g.pool1_side * g.pool1_side,
        c2_len: c2 * g.conv2_side * g.conv2_side,
        p2_len: c2 * g.pool2_side * g.pool2_side,
    })
}

/// Runs the classifier on `[batch, 1, side, side]` images.
pub fn forward(model: &ModelState, batch: &Tensor) -> Result<ForwardTrace> {
    let d = *model.descriptor();
    let l = layout(&d)?;
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != d.input_side || shape[3] != d.input_side {
        return Err(Error::ShapeMismatch {
            context: "forward input",
            expected: vec![shape.first().copied().unwrap_or(1), 1, d.input_side, d.input_side],
            actual: shape.to_vec(),
        });
    }
    let n = shape[0];
    let [c1, c2, c3] = d.conv_widths;
    let img_len = d.input_side * d.input_side;

    let mut act1 = vec![0.0; n * l.c1_len];
    let mut pool1 = vec![0.0; n * l.p1_len];
    let mut act2 = vec![0.0; n * l.c2_len];
    let mut pool2 = vec![0.0; n * l.p2_len];
    let mut cols = vec![0.0; (l.conv1.patch() * l.g.conv1_side.pow(2)).max(l.conv2.patch() * l.g.conv2_side.pow(2))];

    for b in 0..n {
        let x = &batch.data()[b * img_len..(b + 1) * img_len];
        let a1 = &mut act1[b * l.c1_len..(b + 1) * l.c1_len];
        kernels::conv_forward(&l.conv1, x, model.weight(CONV1_W), model.weight(CONV1_B), &mut cols, a1);
        kernels::tanh_inplace(a1);
        let p1 = &mut pool1[b * l.p1_len..(b + 1) * l.p1_len];
        kernels::avg_pool(a1, c1, l.g.conv1_side, p1);
        let a2 = &mut act2[b * l.c2_len..(b + 1) * l.c2_len];
        kernels::conv_forward(&l.conv2, p1, model.weight(CONV2_W), model.weight(CONV2_B), &mut cols, a2);
        kernels::tanh_inplace(a2);
        kernels::avg_pool(a2, c2, l.g.conv2_side, &mut pool2[b * l.p2_len..(b + 1) * l.p2_len]);
    }

    let mut conv3 = vec![0.0; n * c3];
    kernels::dense_out_in(&pool2, model.weight(CONV3_W), model.weight(CONV3_B), l.p2_len, &mut conv3);
    let mut hidden = vec![0.0; n * d.fc_width];
    kernels::dense_in_out(&conv3, model.weight(FC1_W), model.weight(FC1_B), c3, &mut hidden);
    kernels::tanh_inplace(&mut hidden);
    let mut logits = vec![0.0; n * d.classes];
    kernels::dense_in_out(&hidden, model.weight(FC2_W), model.weight(FC2_B), d.fc_width, &mut logits);

    Ok(ForwardTrace {
        logits: Tensor::new(vec![n, d.classes], logits)?,
        penultimate: Tensor::new(vec![n, d.fc_width], hidden)?,
        descriptor: d,
        input: batch.clone(),
        act1,
        pool1,
        act2,
        pool2,
        conv3,
    })
}

/// Reverse-mode gradients given `dloss/dlogits`.
pub fn backward(model: &ModelState, trace: &ForwardTrace, dlogits: &Tensor) -> Result<Gradients> {
    backward_with_penultimate(model, trace, dlogits, None)
}

/// As [`backward`], with an extra gradient injected at the penultimate (fc1) output.
pub fn backward_with_penultimate(
    model: &ModelState,
    trace: &ForwardTrace,
    dlogits: &Tensor,
    dpenultimate: Option<&Tensor>,
) -> Result<Gradients> {
    model.ensure_same_arch(&trace.descriptor)?;
    let d = trace.descriptor;
    let l = layout(&d)?;
    let n = trace.batch_size();
    dlogits.ensure_shape("backward dlogits", &[n, d.classes])?;
    if let Some(dp) = dpenultimate {
        dp.ensure_shape("backward dpenultimate", &[n, d.fc_width])?;
    }
    let [c1, c2, c3] = d.conv_widths;
    let mut grads = Gradients::zeros_like(model);
    let mut gw = |idx: usize| std::mem::replace(&mut grads.tensors[idx], Tensor::zeros(&[1]));
    let (mut g_conv1_w, mut g_conv1_b) = (gw(CONV1_W), gw(CONV1_B));
    let (mut g_conv2_w, mut g_conv2_b) = (gw(CONV2_W), gw(CONV2_B));
    let (mut g_conv3_w, mut g_conv3_b) = (gw(CONV3_W), gw(CONV3_B));
    let (mut g_fc1_w, mut g_fc1_b) = (gw(FC1_W), gw(FC1_B));
    let (mut g_fc2_w, mut g_fc2_b) = (gw(FC2_W), gw(FC2_B));

    let hidden = trace.penultimate.data();
    let mut dhidden = vec![0.0; n * d.fc_width];
    kernels::dense_in_out_backward(
        hidden,
        model.weight(FC2_W),
        dlogits.data(),
        d.fc_width,
        d.classes,
        g_fc2_w.data_mut(),
        g_fc2_b.data_mut(),
        Some(&mut dhidden),
    );
    if let Some(dp) = dpenultimate {
        kernels::axpy(1.0, dp.data(), &mut dhidden);
    }
    kernels::tanh_backward(hidden, &mut dhidden);

    let mut dconv3 = vec![0.0; n * c3];
    kernels::dense_in_out_backward(
        &trace.conv3,
        model.weight(FC1_W),
        &dhidden,
        c3,
        d.fc_width,
        g_fc1_w.data_mut(),
        g_fc1_b.data_mut(),
        Some(&mut dconv3),
    );

    let mut dpool2 = vec![0.0; n * l.p2_len];
    kernels::dense_out_in_backward(
        &trace.pool2,
        model.weight(CONV3_W),
        &dconv3,
        l.p2_len,
        c3,
        g_conv3_w.data_mut(),
        g_conv3_b.data_mut(),
        Some(&mut dpool2),
    );

    let img_len = d.input_side * d.input_side;
    let scratch = (l.conv1.patch() * l.g.conv1_side.pow(2)).max(l.conv2.patch() * l.g.conv2_side.pow(2));
    let mut cols_t = vec![0.0; scratch];
    let mut dcols = vec![0.0; scratch];
    let mut da2 = vec![0.0; l.c2_len];
    let mut dp1 = vec![0.0; l.p1_len];
    let mut da1 = vec![0.0; l.c1_len];
    for b in 0..n {
        kernels::avg_pool_backward(&dpool2[b * l.p2_len..(b + 1) * l.p2_len], c2, l.g.conv2_side, &mut da2);
        kernels::tanh_backward(&trace.act2[b * l.c2_len..(b + 1) * l.c2_len], &mut da2);
        dp1.fill(0.0);
        kernels::conv_backward(
            &l.conv2,
            &trace.pool1[b * l.p1_len..(b + 1) * l.p1_len],
            model.weight(CONV2_W),
            &da2,
            g_conv2_w.data_mut(),
            g_conv2_b.data_mut(),
            &mut cols_t,
            &mut dcols,
            Some(&mut dp1),
        );
        kernels::avg_pool_backward(&dp1, c1, l.g.conv1_side, &mut da1);
        kernels::tanh_backward(&trace.act1[b * l.c1_len..(b + 1) * l.c1_len], &mut da1);
        kernels::conv_backward(
            &l.conv1,
            &trace.input.data()[b * img_len..(b + 1) * img_len],
            model.weight(CONV1_W),
            &da1,
            g_conv1_w.data_mut(),
            g_conv1_b.data_mut(),
            &mut cols_t,
            &mut dcols,
            None,
        );
    }

    grads.tensors = vec![
        g_conv1_w, g_conv1_b, g_conv2_w, g_conv2_b, g_conv3_w, g_conv3_b, g_fc1_w, g_fc1_b, g_fc2_w, g_fc2_b,
    ];
    Ok(grads)
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
