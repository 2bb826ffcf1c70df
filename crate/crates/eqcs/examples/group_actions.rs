//! Cyclic-group actions used throughout the crate: the regular
//! representation (cyclic shift), exact quarter-turn image rotation,
//! bilinear rotation at arbitrary angles, and the block-regular action
//! on latent codes.

use eqcs::diffmath::Tensor;
use eqcs::groups::{
    apply_latent, rotate_bilinear, rotate_exact_quarter, shift_vec, CyclicGroup,
};

fn main() {
    let c4 = CyclicGroup::new(4);

    // regular representation: (T_g x)[i] = x[(i - g) mod n]
    let x = [1.0, 2.0, 3.0, 4.0];
    for g in c4.elements() {
        println!("shift by {}: {:?}", g.index(), shift_vec(&x, g));
    }

    // quarter turns are exact permutations of the pixel grid
    let img = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let r = rotate_exact_quarter(&img, 1).unwrap();
    println!("quarter turn of [[1,2],[3,4]] -> {:?}", r.data());

    // arbitrary angles interpolate bilinearly and agree with the exact
    // permutation at multiples of 90 degrees
    let blob = Tensor::new(
        vec![4, 4],
        (0..16).map(|i| ((i / 4) as f64) * 0.1 + (i % 4) as f64).collect(),
    );
    let exact = rotate_exact_quarter(&blob, 1).unwrap();
    let interp = rotate_bilinear(&blob, std::f64::consts::FRAC_PI_2);
    println!(
        "bilinear vs exact at 90 degrees, max abs gap {:.2e}",
        interp.sub(&exact).max_abs()
    );

    // latent action: block-diagonal copies of the regular representation
    let z = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    let zg = apply_latent(&z, &c4, c4.element(1)).unwrap();
    println!("latent action on two regular blocks: {:?}", zg.data());
}
