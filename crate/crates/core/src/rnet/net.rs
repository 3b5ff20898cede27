//! Forward pass with activation cache and the matching reverse pass.

use super::conv::{conv_backward, conv_forward, upsample2, upsample2_backward, Activation};
use super::{Grads, RNet, Scalar};

struct LayerCache<T> {
    cols: Vec<T>,
    in_dims: (usize, usize, usize),
    /// Post-activation output (pre-activation for the output layer).
    out: Activation<T>,
}

/// Everything the reverse pass needs from one forward evaluation.
pub struct ForwardCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl<T> ForwardCache<T> {
    /// Output of every layer in evaluation order (post-ReLU except the last).
    pub fn activations(&self) -> impl Iterator<Item = &Activation<T>> {
        self.layers.iter().map(|l| &l.out)
    }
}

fn relu<T: Scalar>(a: &mut Activation<T>) {
    a.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

fn relu_backward<T: Scalar>(grad: &mut [T], out: &Activation<T>) {
    for (g, o) in grad.iter_mut().zip(&out.data) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

fn concat<T: Scalar>(a: &Activation<T>, b: &Activation<T>) -> Activation<T> {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Activation {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

fn split<T: Scalar>(g: Activation<T>, first_c: usize) -> (Activation<T>, Activation<T>) {
    let n = first_c * g.h * g.w;
    let (a, b) = g.data.split_at(n);
    (
        Activation {
            c: first_c,
            h: g.h,
            w: g.w,
            data: a.to_vec(),
        },
        Activation {
            c: g.c - first_c,
            h: g.h,
            w: g.w,
            data: b.to_vec(),
        },
    )
}

/// Runs the network on a 4×H×W input (H, W multiples of `2^(levels-1)`) and
/// returns the 1×H×W log-residual with the cache for [`backward`].
pub fn forward<T: Scalar>(net: &RNet<T>, input: &Activation<T>) -> (Activation<T>, ForwardCache<T>) {
    let m = net.config.size_multiple();
    assert_eq!(input.c, super::INPUT_CHANNELS, "network input must have 4 channels");
    assert!(input.h % m == 0 && input.w % m == 0, "input dims must be multiples of {m}");
    let levels = net.config.levels;
    let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(net.layers.len());
    let mut run = |idx: usize, x: &Activation<T>, act: bool| -> Activation<T> {
        let layer = &net.layers[idx];
        debug_assert_eq!(caches.len(), idx);
        debug_assert_eq!(x.c, layer.cin, "{}", layer.name);
        let (mut out, cols) = conv_forward(x, &layer.weight, &layer.bias, layer.cout, layer.stride);
        if act {
            relu(&mut out);
        }
        caches.push(LayerCache {
            cols,
            in_dims: (x.c, x.h, x.w),
            out: out.clone(),
        });
        out
    };

    let a = run(0, input, true);
    let mut skips = vec![run(1, &a, true)];
    for l in 1..levels {
        let d = run(2 * l, &skips[l - 1], true);
        let e = run(2 * l + 1, &d, true);
        skips.push(e);
    }
    let mut cur = skips.pop().expect("at least one level");
    let mut idx = 2 * levels;
    while let Some(skip) = skips.pop() {
        let u = upsample2(&cur);
        let v = run(idx, &u, true);
        cur = run(idx + 1, &concat(&v, &skip), true);
        idx += 2;
    }
    let out = run(idx, &cur, false);
    (out, ForwardCache { layers: caches })
}

/// Gradients of a scalar loss with respect to all parameters, given its
/// gradient with respect to the network output.
pub fn backward<T: Scalar>(net: &RNet<T>, cache: &ForwardCache<T>, grad_out: &Activation<T>) -> Grads<T> {
    let mut grads = Grads::zeros_like(net);
    backward_into(net, cache, grad_out, &mut grads);
    grads
}

/// Like [`backward`] but accumulates into `grads`.
pub fn backward_into<T: Scalar>(net: &RNet<T>, cache: &ForwardCache<T>, grad_out: &Activation<T>, grads: &mut Grads<T>) {
    let levels = net.config.levels;
    assert_eq!(cache.layers.len(), net.layers.len());
    // Propagates `g` (w.r.t. layer idx's post-activation output) to the layer's input.
    let step = |idx: usize, mut g: Activation<T>, act: bool, grads: &mut Grads<T>, need_input: bool| {
        let layer = &net.layers[idx];
        let c = &cache.layers[idx];
        if act {
            relu_backward(&mut g.data, &c.out);
        }
        let (gw, gb) = &mut grads.layers[idx];
        conv_backward(
            &g.data,
            &c.cols,
            &layer.weight,
            c.in_dims.0,
            c.in_dims.1,
            c.in_dims.2,
            layer.cout,
            layer.stride,
            gw,
            gb,
            need_input,
        )
    };

    let out_idx = net.layers.len() - 1;
    let mut g = step(out_idx, grad_out.clone(), false, grads, true).expect("input grad requested");
    // decoder, in reverse: pending skip gradients per level
    let mut skip_grads: Vec<Option<Activation<T>>> = vec![None; levels];
    let mut idx = out_idx;
    for slot in skip_grads.iter_mut().take(levels.saturating_sub(1)) {
        idx -= 2;
        let g_cat = step(idx + 1, g, true, grads, true).expect("input grad requested");
        let first = net.layers[idx].cout;
        let (g_v, g_skip) = split(g_cat, first);
        *slot = Some(g_skip);
        let g_u = step(idx, g_v, true, grads, true).expect("input grad requested");
        g = upsample2_backward(&g_u);
    }
    // encoder: g is the gradient w.r.t. the deepest encoder output
    for l in (1..levels).rev() {
        if let Some(s) = skip_grads[l].take() {
            g.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += *b);
        }
        let gd = step(2 * l + 1, g, true, grads, true).expect("input grad requested");
        g = step(2 * l, gd, true, grads, true).expect("input grad requested");
    }
    if let Some(s) = skip_grads[0].take() {
        g.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += *b);
    }
    let ga = step(1, g, true, grads, true).expect("input grad requested");
    step(0, ga, true, grads, false);
}
