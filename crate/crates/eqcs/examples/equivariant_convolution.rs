//! Group convolutions: the circulant-matrix realization of the 1-d
//! group correlation, and measured equivariance defects of image-level
//! lifting layers for exact and interpolated rotation groups.

use eqcs::diffmath::{Tape, Tensor};
use eqcs::gconv::{act_on_field, build_circulant, equivariance_defect, group_conv_vec, ConvKind, GConv};
use eqcs::groups::{rotate_exact_quarter, CyclicGroup, RotationMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // 1-d group correlation == multiplication by a circulant matrix
    let c8 = CyclicGroup::new(8);
    let w = Tensor::randn(vec![8], &mut rng);
    let x = Tensor::randn(vec![8], &mut rng);
    let gap = group_conv_vec(&w, &x, &c8).sub(&build_circulant(&w, &c8).matvec(&x)).max_abs();
    println!("circulant realization gap: {gap:.2e}");

    // a C4 lifting layer is exactly equivariant on the pixel grid
    let c4 = CyclicGroup::new(4);
    let lift = GConv::new(&c4, ConvKind::Lift, 1, 3, 3, 1, 1, 16, 16);
    let kernel = Tensor::randn(lift.kernel_shape(), &mut rng);
    let run = |conv: &GConv, kernel: &Tensor, x: &Tensor| -> Tensor {
        let tape = Tape::new();
        conv.forward(tape.leaf(kernel.clone()), None, tape.leaf(x.clone())).value()
    };
    let samples: Vec<Tensor> = (0..3).map(|_| Tensor::randn(vec![1, 1, 16, 16], &mut rng)).collect();
    let d4 = equivariance_defect(
        |x| run(&lift, &kernel, x),
        |x, g| {
            let img = Tensor::new(vec![16, 16], x.data().to_vec());
            let r = rotate_exact_quarter(&img, g.index() as i64).unwrap();
            Tensor::new(x.shape().to_vec(), r.data().to_vec())
        },
        |y, g| act_on_field(y, &c4, g, RotationMode::ExactQuarter),
        &c4,
        &samples,
    );
    println!("C4 lift layer defect (random kernels, random inputs): {d4:.2e}");

    // finer groups rely on bilinear interpolation; with smooth kernels
    // and smooth inputs the defect is small but not zero
    let c8 = CyclicGroup::new(8);
    let conv = GConv::new(&c8, ConvKind::Lift, 1, 1, 5, 1, 2, 16, 16);
    let mut kernel = Tensor::zeros(conv.kernel_shape());
    for i in 0..5 {
        for j in 0..5 {
            let (u, v) = (j as f64 - 2.0, i as f64 - 2.0);
            kernel.data_mut()[i * 5 + j] =
                (-(u * u + v * v) / 2.0).exp() * (1.0 + 0.5 * v.atan2(u).cos());
        }
    }
    let mut img = Tensor::zeros(vec![1, 1, 16, 16]);
    for i in 0..16 {
        for j in 0..16 {
            let d2 = (i as f64 - 7.5).powi(2) + (j as f64 - 6.5).powi(2);
            img.data_mut()[i * 16 + j] = (-d2 / 18.0).exp();
        }
    }
    let d8 = equivariance_defect(
        |x| run(&conv, &kernel, x),
        |x, g| {
            let im = Tensor::new(vec![16, 16], x.data().to_vec());
            let r = eqcs::groups::rotate_bilinear(&im, g.angle());
            Tensor::new(x.shape().to_vec(), r.data().to_vec())
        },
        |y, g| act_on_field(y, &c8, g, RotationMode::Bilinear),
        &c8,
        &[img],
    );
    println!("C8 lift layer defect (smooth kernel, smooth input): {d8:.2e}");
}
