#![allow(dead_code)]

use pseudosr::networks::NetworkBundle;

fn zero_off_center(store: &mut autograd::ParamStore<f64>) {
    for i in 0..store.params().len() {
        let p = store.param_mut(i);
        if p.value.ndim() != 4 {
            continue;
        }
        let sh = p.value.shape().to_vec();
        let (ky, kx) = (sh[2], sh[3]);
        for o in 0..sh[0] {
            for c in 0..sh[1] {
                for y in 0..ky {
                    for x in 0..kx {
                        if y != ky / 2 || x != kx / 2 {
                            p.value[[o, c, y, x]] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Zeroing every off-center kernel tap makes all convs pointwise, and tying
/// the sub-pixel phase groups makes upscaling a plain pixel replication:
/// the model becomes exactly dihedral-equivariant, so the 8-way ensemble
/// must reproduce the single-pass output.
pub fn make_equivariant(nets: &mut NetworkBundle<f64>) {
    zero_off_center(&mut nets.g_correct.store);
    zero_off_center(&mut nets.sr.store);
    let store = &mut nets.sr.store;
    for i in 0..store.params().len() {
        let p = store.param_mut(i);
        let name = p.name.clone();
        if !name.starts_with("up") {
            continue;
        }
        if p.value.ndim() == 4 {
            let sh = p.value.shape().to_vec();
            let (ky, kx) = (sh[2], sh[3]);
            // Out channel 4c+p copies 4c: all four sub-pixel phases agree.
            for o in 0..sh[0] {
                let base = (o / 4) * 4;
                if o != base {
                    for c in 0..sh[1] {
                        p.value[[o, c, ky / 2, kx / 2]] = p.value[[base, c, ky / 2, kx / 2]];
                    }
                }
            }
        } else if p.value.ndim() == 1 && name.ends_with(".b") {
            for o in 0..p.value.len() {
                let base = (o / 4) * 4;
                if o != base {
                    p.value[[o]] = p.value[[base]];
                }
            }
        }
    }
}
