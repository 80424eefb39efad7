use crate::models::{LayerSpec, ModelError, NetworkRole, NetworkSpec, Result};

/// Window geometry every network is sized against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowShapes {
    pub channels: usize,
    pub freq_bins: usize,
    pub window_steps: usize,
    pub grid: [usize; 3],
}

impl WindowShapes {
    pub fn new(eeg_shape: &[usize], fmri_shape: &[usize]) -> Result<Self> {
        if eeg_shape.len() != 3 || fmri_shape.len() != 4 || eeg_shape[2] != fmri_shape[0] {
            return Err(ModelError::ShapeComposition {
                index: 0,
                layer: "window".into(),
                input: eeg_shape.to_vec(),
                detail: format!("eeg {eeg_shape:?} and fmri {fmri_shape:?} do not share a window length"),
            });
        }
        Ok(WindowShapes {
            channels: eeg_shape[0],
            freq_bins: eeg_shape[1],
            window_steps: eeg_shape[2],
            grid: [fmri_shape[1], fmri_shape[2], fmri_shape[3]],
        })
    }

    pub fn eeg_shape(&self) -> Vec<usize> {
        vec![self.channels, self.freq_bins, self.window_steps]
    }

    pub fn fmri_shape(&self) -> Vec<usize> {
        vec![self.window_steps, self.grid[0], self.grid[1], self.grid[2]]
    }

    pub fn voxels(&self) -> usize {
        self.grid.iter().product()
    }
}

/// Concrete sizes the architecture search picks per depth: encoder layer
/// extents shrink monotonically, decoder extents grow back to the target
/// grid, and every network keeps the window's time axis intact.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams {
    pub depth: usize,
    pub enc_dim: usize,
    pub gru_hidden: usize,
    pub dropout_p: f64,
    /// Per conv layer: remaining channel extent after the layer (len depth).
    pub eeg_channel_sizes: Vec<usize>,
    /// Per conv layer: remaining frequency extent (len depth).
    pub eeg_freq_sizes: Vec<usize>,
    /// Per conv layer: remaining spatial extents (len depth).
    pub fmri_spatial: Vec<[usize; 3]>,
    /// Spatial extents entering each transposed conv, plus the final grid
    /// (len depth + 1, last == grid).
    pub dec_spatial: Vec<[usize; 3]>,
}

fn monotone_err(detail: String) -> ModelError {
    ModelError::ShapeComposition {
        index: 0,
        layer: "arch".into(),
        input: vec![],
        detail,
    }
}

impl ArchParams {
    pub fn validate(&self, shapes: &WindowShapes) -> Result<()> {
        if self.depth == 0 || self.enc_dim == 0 || self.gru_hidden == 0 {
            return Err(monotone_err("depth, enc_dim, gru_hidden must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return Err(monotone_err(format!("drop probability {}", self.dropout_p)));
        }
        let check_shrink = |name: &str, start: usize, sizes: &[usize]| -> Result<()> {
            if sizes.len() != self.depth {
                return Err(monotone_err(format!("{name} needs {} sizes", self.depth)));
            }
            let mut prev = start;
            for &s in sizes {
                if s == 0 || s > prev {
                    return Err(monotone_err(format!(
                        "{name} sizes {sizes:?} must shrink monotonically from {start}"
                    )));
                }
                prev = s;
            }
            Ok(())
        };
        check_shrink("eeg channel", shapes.channels, &self.eeg_channel_sizes)?;
        check_shrink("eeg freq", shapes.freq_bins, &self.eeg_freq_sizes)?;
        if self.fmri_spatial.len() != self.depth {
            return Err(monotone_err(format!("fmri spatial needs {} sizes", self.depth)));
        }
        for axis in 0..3 {
            let sizes: Vec<usize> = self.fmri_spatial.iter().map(|s| s[axis]).collect();
            check_shrink("fmri spatial", shapes.grid[axis], &sizes)?;
        }
        if self.dec_spatial.len() != self.depth + 1 {
            return Err(monotone_err(format!(
                "decoder spatial needs {} sizes",
                self.depth + 1
            )));
        }
        for axis in 0..3 {
            let mut prev = 0usize;
            for step in &self.dec_spatial {
                if step[axis] == 0 || step[axis] < prev {
                    return Err(monotone_err(format!(
                        "decoder spatial {:?} must grow monotonically",
                        self.dec_spatial
                    )));
                }
                prev = step[axis];
            }
            if self.dec_spatial[self.depth][axis] != shapes.grid[axis] {
                return Err(monotone_err(format!(
                    "decoder spatial {:?} must end at the grid {:?}",
                    self.dec_spatial, shapes.grid
                )));
            }
        }
        Ok(())
    }
}

/// The six network templates for one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpecs {
    pub eeg_encoder: NetworkSpec,
    pub fmri_encoder: NetworkSpec,
    pub decoder: NetworkSpec,
    pub discriminator: NetworkSpec,
    pub temp_eeg: NetworkSpec,
    pub temp_fmri: NetworkSpec,
}

/// Realizes the architecture: encoders end in a [window_steps, enc_dim]
/// encoding, the decoder maps it back to the fMRI window, the discriminator
/// mirrors the fMRI encoder with a scalar head (sigmoid only for the
/// cross-entropy adversary), and the temporal heads squeeze features to 1
/// then run a GRU. All convolutions leave the time axis untouched.
pub fn build_specs(
    arch: &ArchParams,
    shapes: &WindowShapes,
    sigmoid_head: bool,
) -> Result<ModelSpecs> {
    arch.validate(shapes)?;
    let t = shapes.window_steps;

    let mut eeg_layers = Vec::new();
    let mut c_prev = shapes.channels;
    let mut f_prev = shapes.freq_bins;
    for (&c, &f) in arch.eeg_channel_sizes.iter().zip(&arch.eeg_freq_sizes) {
        eeg_layers.push(LayerSpec::Conv {
            kernel: vec![c_prev - c + 1, f_prev - f + 1, 1],
            stride: vec![1, 1, 1],
        });
        eeg_layers.push(LayerSpec::Relu);
        eeg_layers.push(LayerSpec::Dropout { p: arch.dropout_p });
        c_prev = c;
        f_prev = f;
    }
    eeg_layers.push(LayerSpec::Permute { axes: vec![2, 0, 1] });
    eeg_layers.push(LayerSpec::Reshape {
        shape: vec![t, c_prev * f_prev],
    });
    eeg_layers.push(LayerSpec::Dense { units: arch.enc_dim });
    let eeg_encoder = NetworkSpec {
        role: NetworkRole::EEGEncoder,
        input_shape: shapes.eeg_shape(),
        layers: eeg_layers,
    };

    let fmri_conv_stack = |dropout: bool| -> (Vec<LayerSpec>, [usize; 3]) {
        let mut layers = Vec::new();
        let mut prev = shapes.grid;
        for s in &arch.fmri_spatial {
            layers.push(LayerSpec::Conv {
                kernel: vec![
                    1,
                    prev[0] - s[0] + 1,
                    prev[1] - s[1] + 1,
                    prev[2] - s[2] + 1,
                ],
                stride: vec![1, 1, 1, 1],
            });
            layers.push(LayerSpec::Relu);
            if dropout {
                layers.push(LayerSpec::Dropout { p: arch.dropout_p });
            }
            prev = *s;
        }
        (layers, prev)
    };

    let (mut fmri_layers, fmri_end) = fmri_conv_stack(true);
    fmri_layers.push(LayerSpec::Reshape {
        shape: vec![t, fmri_end.iter().product()],
    });
    fmri_layers.push(LayerSpec::Dense { units: arch.enc_dim });
    let fmri_encoder = NetworkSpec {
        role: NetworkRole::FMRIEncoder,
        input_shape: shapes.fmri_shape(),
        layers: fmri_layers,
    };

    let mut dec_layers = Vec::new();
    let g0 = arch.dec_spatial[0];
    dec_layers.push(LayerSpec::Dense {
        units: g0.iter().product(),
    });
    dec_layers.push(LayerSpec::Reshape {
        shape: vec![t, g0[0], g0[1], g0[2]],
    });
    let mut prev = g0;
    for g in &arch.dec_spatial[1..] {
        dec_layers.push(LayerSpec::Relu);
        dec_layers.push(LayerSpec::Dropout { p: arch.dropout_p });
        dec_layers.push(LayerSpec::ConvTranspose {
            kernel: vec![
                1,
                g[0] - prev[0] + 1,
                g[1] - prev[1] + 1,
                g[2] - prev[2] + 1,
            ],
            stride: vec![1, 1, 1, 1],
        });
        prev = *g;
    }
    let decoder = NetworkSpec {
        role: NetworkRole::Decoder,
        input_shape: vec![t, arch.enc_dim],
        layers: dec_layers,
    };

    let (mut disc_layers, _) = fmri_conv_stack(false);
    disc_layers.push(LayerSpec::Flatten);
    disc_layers.push(LayerSpec::Dense { units: 1 });
    if sigmoid_head {
        disc_layers.push(LayerSpec::Sigmoid);
    }
    let discriminator = NetworkSpec {
        role: NetworkRole::Discriminator,
        input_shape: shapes.fmri_shape(),
        layers: disc_layers,
    };

    let head = |role: NetworkRole| NetworkSpec {
        role,
        input_shape: vec![t, arch.enc_dim],
        layers: vec![
            LayerSpec::Dense { units: 1 },
            LayerSpec::Gru {
                hidden: arch.gru_hidden,
            },
        ],
    };
    let specs = ModelSpecs {
        eeg_encoder,
        fmri_encoder,
        decoder,
        discriminator,
        temp_eeg: head(NetworkRole::TemporalHead),
        temp_fmri: head(NetworkRole::TemporalHead),
    };

    let dec_out = specs.decoder.output_shape()?;
    if dec_out != shapes.fmri_shape() {
        return Err(monotone_err(format!(
            "decoder produces {dec_out:?}, window needs {:?}",
            shapes.fmri_shape()
        )));
    }
    Ok(specs)
}

/// Monotone interpolation from `start` down to `end` over `depth` layers.
fn shrink_sequence(start: usize, end: usize, depth: usize) -> Vec<usize> {
    let end = end.clamp(1, start);
    (1..=depth)
        .map(|i| {
            let f = i as f64 / depth as f64;
            start - ((start - end) as f64 * f).round() as usize
        })
        .collect()
}

/// A compositional architecture without any search: encoders shrink each
/// reduced axis to about half, the decoder grows from about half back up.
pub fn default_arch(shapes: &WindowShapes, depth: usize) -> ArchParams {
    let half = |v: usize| (v / 2).max(1);
    let eeg_channel_sizes = shrink_sequence(shapes.channels, half(shapes.channels), depth);
    let eeg_freq_sizes = shrink_sequence(shapes.freq_bins, half(shapes.freq_bins), depth);
    let per_axis: Vec<Vec<usize>> = (0..3)
        .map(|a| shrink_sequence(shapes.grid[a], half(shapes.grid[a]), depth))
        .collect();
    let fmri_spatial: Vec<[usize; 3]> = (0..depth)
        .map(|i| [per_axis[0][i], per_axis[1][i], per_axis[2][i]])
        .collect();
    let mut dec_spatial = Vec::with_capacity(depth + 1);
    for i in 0..=depth {
        let g = |a: usize| {
            let lo = half(shapes.grid[a]);
            lo + ((shapes.grid[a] - lo) as f64 * i as f64 / depth as f64).round() as usize
        };
        dec_spatial.push([g(0), g(1), g(2)]);
    }
    ArchParams {
        depth,
        enc_dim: 8,
        gru_hidden: 4,
        dropout_p: 0.5,
        eeg_channel_sizes,
        eeg_freq_sizes,
        fmri_spatial,
        dec_spatial,
    }
}

/// Decodes unit-interval search coordinates into a valid architecture:
/// each shrink fraction removes a share of the remaining extent (keeping
/// sizes monotone ≥ 1), each growth fraction adds a share of the distance
/// to the target grid. `eeg_fracs`/`fmri_fracs`/`dec_fracs` hold one value
/// per layer; `enc_dim_frac` picks the encoding width in [1, 32].
pub fn arch_from_fractions(
    depth: usize,
    shapes: &WindowShapes,
    enc_dim_frac: f64,
    eeg_channel_fracs: &[f64],
    eeg_freq_fracs: &[f64],
    fmri_fracs: &[f64],
    dec_fracs: &[f64],
    dropout_p: f64,
) -> ArchParams {
    let shrink = |start: usize, fracs: &[f64]| -> Vec<usize> {
        let mut prev = start;
        fracs
            .iter()
            .map(|&u| {
                let next = prev - ((prev - 1) as f64 * u.clamp(0.0, 1.0)).round() as usize;
                prev = next;
                next
            })
            .collect()
    };
    let eeg_channel_sizes = shrink(shapes.channels, eeg_channel_fracs);
    let eeg_freq_sizes = shrink(shapes.freq_bins, eeg_freq_fracs);
    let fmri_spatial: Vec<[usize; 3]> = {
        let per_axis: Vec<Vec<usize>> = (0..3).map(|a| shrink(shapes.grid[a], fmri_fracs)).collect();
        (0..depth)
            .map(|i| [per_axis[0][i], per_axis[1][i], per_axis[2][i]])
            .collect()
    };
    let dec_spatial: Vec<[usize; 3]> = {
        let grow = |target: usize| -> Vec<usize> {
            let mut sizes = Vec::with_capacity(depth + 1);
            let mut prev = 1 + ((target - 1) as f64 * dec_fracs[0].clamp(0.0, 1.0)).round() as usize;
            sizes.push(prev);
            for i in 1..depth {
                prev += ((target - prev) as f64 * dec_fracs[i].clamp(0.0, 1.0)).round() as usize;
                sizes.push(prev);
            }
            sizes.push(target);
            sizes
        };
        let per_axis: Vec<Vec<usize>> = (0..3).map(|a| grow(shapes.grid[a])).collect();
        (0..=depth)
            .map(|i| [per_axis[0][i], per_axis[1][i], per_axis[2][i]])
            .collect()
    };
    ArchParams {
        depth,
        enc_dim: 1 + (enc_dim_frac.clamp(0.0, 1.0) * 31.0).round() as usize,
        gru_hidden: 4,
        dropout_p,
        eeg_channel_sizes,
        eeg_freq_sizes,
        fmri_spatial,
        dec_spatial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_network;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn desk_shapes() -> WindowShapes {
        WindowShapes {
            channels: 4,
            freq_bins: 17,
            window_steps: 14,
            grid: [4, 4, 3],
        }
    }

    #[test]
    fn default_arch_composes_at_depths_one_to_three() {
        let shapes = desk_shapes();
        for depth in 1..=3 {
            let arch = default_arch(&shapes, depth);
            let specs = build_specs(&arch, &shapes, true).unwrap();
            assert_eq!(
                specs.eeg_encoder.output_shape().unwrap(),
                vec![14, arch.enc_dim]
            );
            assert_eq!(
                specs.fmri_encoder.output_shape().unwrap(),
                vec![14, arch.enc_dim]
            );
            assert_eq!(specs.decoder.output_shape().unwrap(), vec![14, 4, 4, 3]);
            assert_eq!(specs.discriminator.output_shape().unwrap(), vec![1]);
            assert_eq!(
                specs.temp_eeg.output_shape().unwrap(),
                vec![14, arch.gru_hidden]
            );
            build_network(&specs.eeg_encoder, 1).unwrap();
            build_network(&specs.decoder, 2).unwrap();
        }
    }

    #[test]
    fn encoders_share_the_encoding_shape() {
        let shapes = desk_shapes();
        let specs = build_specs(&default_arch(&shapes, 2), &shapes, false).unwrap();
        assert_eq!(
            specs.eeg_encoder.output_shape().unwrap(),
            specs.fmri_encoder.output_shape().unwrap()
        );
        // Linear critic head: no sigmoid layer present.
        assert!(!specs
            .discriminator
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Sigmoid)));
    }

    #[test]
    fn invalid_architectures_are_rejected() {
        let shapes = desk_shapes();
        let mut arch = default_arch(&shapes, 2);
        arch.eeg_channel_sizes = vec![2, 3]; // grows: not monotone
        assert!(build_specs(&arch, &shapes, true).is_err());

        let mut arch = default_arch(&shapes, 2);
        arch.dec_spatial.last_mut().unwrap()[0] = 5; // misses the grid
        assert!(build_specs(&arch, &shapes, true).is_err());

        let mut arch = default_arch(&shapes, 2);
        arch.dropout_p = 1.5;
        assert!(build_specs(&arch, &shapes, true).is_err());
    }

    #[test]
    fn fraction_decoding_always_yields_valid_monotone_archs() {
        let shapes = desk_shapes();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..200 {
            let depth = rng.gen_range(1..=3);
            let fr = |rng: &mut ChaCha12Rng| -> Vec<f64> {
                (0..depth).map(|_| rng.gen::<f64>()).collect()
            };
            let arch = arch_from_fractions(
                depth,
                &shapes,
                rng.gen(),
                &fr(&mut rng),
                &fr(&mut rng),
                &fr(&mut rng),
                &fr(&mut rng),
                0.5,
            );
            arch.validate(&shapes).unwrap();
            assert!(arch.enc_dim >= 1 && arch.enc_dim <= 32);
            build_specs(&arch, &shapes, true).unwrap();
        }
    }
}
