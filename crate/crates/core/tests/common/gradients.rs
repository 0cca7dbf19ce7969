//! Finite-difference scenarios for every backward pass, all in f64 and eval mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skytemp::encoding::TemperatureScale;
use skytemp::nn::gradcheck::{grad_check, sample_coordinates, GradCheckReport};
use skytemp::nn::layers::{maxpool2d, softmax, softmax_backward, Conv2d, Dense};
use skytemp::nn::loss::{cross_entropy, cross_entropy_grad, sequence_mse, sequence_mse_grad, softmax_cross_entropy_grad};
use skytemp::nn::{CnnModel, CnnSpec, Direction, LstmCell, Mode, Params, SequenceModel, Tensor};

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(shape, random_vec(shape.iter().product(), r)).unwrap()
}

fn image(size: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = 3 * size * size;
    Tensor::from_vec(&[3, size, size], (0..n).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `per_block` coordinates from each contiguous block of the parameter vector.
fn stratified(block_sizes: &[usize], per_block: usize, seed: u64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, &n) in block_sizes.iter().enumerate() {
        out.extend(sample_coordinates(n, per_block, seed + i as u64).into_iter().map(|c| c + offset));
        offset += n;
    }
    out
}

pub fn dense() -> GradCheckReport {
    let mut r = rng(1);
    let layer = Dense::<f64>::new(3, 2, &mut r);
    let x = random_tensor(&[3], &mut r);
    let proj = random_vec(2, &mut r);
    let mut grad = layer.clone();
    grad.weight.fill(0.0);
    grad.bias.fill(0.0);
    let dx = layer
        .backward(&x, &Tensor::from_vec(&[2], proj.clone()).unwrap(), &mut grad, true)
        .unwrap();
    let mut params = layer.weight.data().to_vec();
    params.extend_from_slice(layer.bias.data());
    params.extend_from_slice(x.data());
    let mut analytic = grad.weight.data().to_vec();
    analytic.extend_from_slice(grad.bias.data());
    analytic.extend_from_slice(dx.data());
    let f = |p: &[f64]| {
        let l = Dense::from_parts(Tensor::from_vec(&[3, 2], p[..6].to_vec())?, Tensor::from_vec(&[2], p[6..8].to_vec())?)?;
        let y = l.forward(&Tensor::from_vec(&[3], p[8..].to_vec())?)?;
        Ok((dot(y.data(), &proj), 0))
    };
    let coords: Vec<usize> = (0..params.len()).collect();
    grad_check(f, &params, &analytic, &coords, EPS).unwrap()
}

pub fn conv() -> GradCheckReport {
    let mut r = rng(2);
    let layer = Conv2d::<f64>::new(2, 3, 3, &mut r);
    let x = random_tensor(&[2, 5, 6], &mut r);
    let proj = random_vec(3 * 30, &mut r);
    let (_, cache) = layer.forward(&x).unwrap();
    let mut grad = layer.clone();
    grad.weight.fill(0.0);
    grad.bias.fill(0.0);
    let dx = layer
        .backward(&cache, &Tensor::from_vec(&[3, 5, 6], proj.clone()).unwrap(), &mut grad, true)
        .unwrap();
    let (nw, nb) = (layer.weight.len(), layer.bias.len());
    let mut params = layer.weight.data().to_vec();
    params.extend_from_slice(layer.bias.data());
    params.extend_from_slice(x.data());
    let mut analytic = grad.weight.data().to_vec();
    analytic.extend_from_slice(grad.bias.data());
    analytic.extend_from_slice(dx.data());
    let f = |p: &[f64]| {
        let l = Conv2d::from_parts(
            Tensor::from_vec(&[3, 2, 3, 3], p[..nw].to_vec())?,
            Tensor::from_vec(&[3], p[nw..nw + nb].to_vec())?,
        )?;
        let (y, _) = l.forward(&Tensor::from_vec(&[2, 5, 6], p[nw + nb..].to_vec())?)?;
        Ok((dot(y.data(), &proj), 0))
    };
    let coords: Vec<usize> = (0..params.len()).collect();
    grad_check(f, &params, &analytic, &coords, EPS).unwrap()
}

pub fn maxpool() -> GradCheckReport {
    let mut r = rng(3);
    let x = random_tensor(&[2, 4, 6], &mut r);
    let proj = random_vec(2 * 2 * 3, &mut r);
    let (_, argmax) = maxpool2d(&x).unwrap();
    let dx = skytemp::nn::layers::maxpool2d_backward(
        x.shape(),
        &argmax,
        &Tensor::from_vec(&[2, 2, 3], proj.clone()).unwrap(),
    );
    let f = |p: &[f64]| {
        let (y, arg) = maxpool2d(&Tensor::from_vec(&[2, 4, 6], p.to_vec())?)?;
        let sig = arg.iter().fold(0u64, |h, &i| h.wrapping_mul(31).wrapping_add(i as u64));
        Ok((dot(y.data(), &proj), sig))
    };
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check(f, x.data(), dx.data(), &coords, EPS).unwrap()
}

/// Both routes: the fused `y − t` logit gradient and the chained
/// cross-entropy → softmax vector-Jacobian product.
pub fn softmax_cross_entropy() -> (GradCheckReport, GradCheckReport) {
    let mut r = rng(4);
    let scale = TemperatureScale::default();
    let target = scale.encode_lde(3.0, 3.5).unwrap().into_vec();
    let logits: Vec<f64> = random_vec(70, &mut r).into_iter().map(|v| 2.0 * v).collect();
    let probs = softmax(&logits);
    let fused = softmax_cross_entropy_grad(&probs, &target);
    let chained = softmax_backward(&probs, &cross_entropy_grad(&probs, &target).unwrap());
    let f = |p: &[f64]| Ok((cross_entropy(&softmax(p), &target)?, 0));
    let coords: Vec<usize> = (0..70).collect();
    (
        grad_check(f, &logits, &fused, &coords, EPS).unwrap(),
        grad_check(f, &logits, &chained, &coords, EPS).unwrap(),
    )
}

/// Three unrolled steps; loss is a random projection of the final `h` and `c`.
pub fn lstm_cell() -> GradCheckReport {
    let mut r = rng(5);
    let (n_in, h) = (4, 3);
    let mut cell = LstmCell::<f64>::new(n_in, h, &mut r);
    cell.bias.data_mut().iter_mut().for_each(|b| *b += r.random_range(-0.3..0.3));
    let xs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(n_in, &mut r)).collect();
    let ph = random_vec(h, &mut r);
    let pc = random_vec(h, &mut r);

    let run = |cell: &LstmCell<f64>, xs: &[Vec<f64>]| {
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        let mut caches = Vec::new();
        for x in xs {
            let (hn, cn, cache) = cell.step(x, &hs, &cs).unwrap();
            caches.push(cache);
            hs = hn;
            cs = cn;
        }
        (hs, cs, caches)
    };
    let (_, _, caches) = run(&cell, &xs);
    let mut grad = cell.clone();
    grad.w_input.fill(0.0);
    grad.w_hidden.fill(0.0);
    grad.bias.fill(0.0);
    let (mut dh, mut dc) = (ph.clone(), pc.clone());
    let mut dxs = vec![Vec::new(); 3];
    for t in (0..3).rev() {
        let g = cell.step_backward(&caches[t], &dh, &dc, &mut grad);
        dxs[t] = g.dx;
        dh = g.dh_prev;
        dc = g.dc_prev;
    }
    let (nwi, nwh, nb) = (cell.w_input.len(), cell.w_hidden.len(), cell.bias.len());
    let mut params = [cell.w_input.data(), cell.w_hidden.data(), cell.bias.data()].concat();
    let mut analytic = [grad.w_input.data(), grad.w_hidden.data(), grad.bias.data()].concat();
    for t in 0..3 {
        params.extend_from_slice(&xs[t]);
        analytic.extend_from_slice(&dxs[t]);
    }
    let f = |p: &[f64]| {
        let c = LstmCell::from_parts(
            Tensor::from_vec(&[4 * h, n_in], p[..nwi].to_vec())?,
            Tensor::from_vec(&[4 * h, h], p[nwi..nwi + nwh].to_vec())?,
            Tensor::from_vec(&[4 * h], p[nwi + nwh..nwi + nwh + nb].to_vec())?,
        )?;
        let base = nwi + nwh + nb;
        let xs: Vec<Vec<f64>> = (0..3).map(|t| p[base + t * n_in..base + (t + 1) * n_in].to_vec()).collect();
        let (hs, cs, _) = run(&c, &xs);
        Ok((dot(&hs, &ph) + dot(&cs, &pc), 0))
    };
    let coords: Vec<usize> = (0..params.len()).collect();
    grad_check(f, &params, &analytic, &coords, EPS).unwrap()
}

/// Reference-width CNN on a 16×16 input, cross-entropy against an LDE target.
/// Samples `param_coords` parameters (stratified over tensors) plus 20 pixels.
pub fn cnn(param_coords: usize) -> GradCheckReport {
    let mut r = rng(6);
    let spec = CnnSpec::new(16);
    let model = CnnModel::<f64>::new(spec, &mut r).unwrap();
    let img = image(16, &mut r);
    let target = TemperatureScale::default().encode_lde(21.0, 3.5).unwrap().into_vec();

    let (logits, cache) = model.forward(&img, Mode::Eval, &mut r).unwrap();
    let dlogits = softmax_cross_entropy_grad(&softmax(logits.data()), &target);
    let mut grads = model.zeros_like();
    let dx = model
        .backward(&cache, &Tensor::from_vec(&[70], dlogits).unwrap(), &mut grads, true)
        .unwrap();

    let n_params = model.param_count();
    let mut params = model.flat_f64();
    params.extend_from_slice(img.data());
    let mut analytic = grads.flat_f64();
    analytic.extend_from_slice(dx.data());

    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let per_tensor = param_coords.div_ceil(sizes.len());
    let mut coords = stratified(&sizes, per_tensor, 60);
    coords.truncate(param_coords);
    coords.extend(sample_coordinates(img.len(), 20, 61).into_iter().map(|c| c + n_params));

    let mut scratch = model.clone();
    let f = |p: &[f64]| {
        scratch.set_flat_f64(&p[..n_params])?;
        let x = Tensor::from_vec(&[3, 16, 16], p[n_params..].to_vec())?;
        let (logits, cache) = scratch.forward(&x, Mode::Eval, &mut rng(0))?;
        Ok((cross_entropy(&softmax(logits.data()), &target)?, cache.activation_signature()))
    };
    grad_check(f, &params, &analytic, &coords, EPS).unwrap()
}

/// Narrow CNN + LSTM (n = 3) with the summed squared error against LDE targets.
pub fn sequence(direction: Direction, param_coords: usize) -> GradCheckReport {
    let mut r = rng(7);
    let spec = CnnSpec {
        input_size: 8,
        channels: 3,
        num_classes: 70,
        filters: [4, 6],
        dense_width: 16,
    };
    let model = SequenceModel::<f64>::new(spec, 5, direction, &mut r).unwrap();
    let imgs: Vec<Tensor<f64>> = (0..3).map(|_| image(8, &mut r)).collect();
    let scale = TemperatureScale::default();
    let targets: Vec<Vec<f64>> = [4.0, 6.0, 5.0]
        .iter()
        .map(|&t| scale.encode_lde(t, 4.0).unwrap().into_vec())
        .collect();

    let (probs, cache) = model.forward(&imgs, Mode::Eval, &mut r).unwrap();
    let dprobs = sequence_mse_grad(&probs, &targets).unwrap();
    let mut grads = model.zeros_like();
    let dimgs = model.backward(&cache, &dprobs, &mut grads, true).unwrap().unwrap();

    let n_params = model.param_count();
    let px = imgs[0].len();
    let mut params = model.flat_f64();
    let mut analytic = grads.flat_f64();
    for (img, d) in imgs.iter().zip(&dimgs) {
        params.extend_from_slice(img.data());
        analytic.extend_from_slice(d.data());
    }
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut coords = stratified(&sizes, param_coords.div_ceil(sizes.len()), 70);
    coords.truncate(param_coords);
    coords.extend(sample_coordinates(3 * px, 30, 71).into_iter().map(|c| c + n_params));

    let mut scratch = model.clone();
    let f = |p: &[f64]| {
        scratch.set_flat_f64(&p[..n_params])?;
        let xs: Vec<Tensor<f64>> = (0..3)
            .map(|t| Tensor::from_vec(&[3, 8, 8], p[n_params + t * px..n_params + (t + 1) * px].to_vec()))
            .collect::<Result<_, _>>()?;
        let (probs, cache) = scratch.forward(&xs, Mode::Eval, &mut rng(0))?;
        Ok((sequence_mse(&probs, &targets)?, cache.activation_signature()))
    };
    grad_check(f, &params, &analytic, &coords, EPS).unwrap()
}
