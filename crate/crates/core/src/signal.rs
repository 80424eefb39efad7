use std::rc::Rc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use eeg2fmri_tensor::nd::{self, NdArray};

/// Default offset inside log-scaling: ln(x + offset) guards zero voxels.
pub const DEFAULT_LOG_OFFSET: f64 = 1e-6;

/// Tolerance for treating real-valued durations as integer step counts.
const STEP_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid signal input: {0}")]
    InvalidInput(String),

    #[error("window of {window_s} s is not an integer number of samples at {sampling_rate_hz} Hz")]
    NonIntegerWindow { window_s: f64, sampling_rate_hz: f64 },

    #[error("window of {window_s} s exceeds the {duration_s} s recording")]
    WindowTooLong { window_s: f64, duration_s: f64 },

    #[error("series is already log-scaled")]
    AlreadyScaled,

    #[error("log-scaling produced a non-finite value from input {value}")]
    NonFiniteLog { value: f64 },

    #[error("invalid downsampling factor {factor}")]
    InvalidFactor { factor: usize },

    #[error("invalid time step {step_s} s")]
    InvalidStep { step_s: f64 },

    #[error("resampling needs at least 2 time points, got {points}")]
    TooFewPoints { points: usize },

    #[error("EEG step {eeg_step_s} s does not match fMRI step {fmri_step_s} s")]
    StepMismatch { eeg_step_s: f64, fmri_step_s: f64 },

    #[error("window {window_s} s is not a positive multiple of step {step_s} s")]
    WindowNotMultiple { window_s: f64, step_s: f64 },

    #[error("shift {shift_s} s is not a non-negative multiple of step {step_s} s")]
    ShiftNotMultiple { shift_s: f64, step_s: f64 },

    #[error("recording too short: {available_s} s available for {window_s} s windows shifted by {shift_s} s")]
    RecordingTooShort {
        window_s: f64,
        shift_s: f64,
        available_s: f64,
    },
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Multi-channel raw EEG: samples[c][i] at i / sampling_rate_hz seconds.
#[derive(Debug, Clone)]
pub struct EEGRecording {
    pub sampling_rate_hz: f64,
    /// [channels, samples]
    pub samples: NdArray,
}

impl EEGRecording {
    pub fn new(sampling_rate_hz: f64, samples: NdArray) -> Result<Self> {
        if !(sampling_rate_hz > 0.0) {
            return Err(SignalError::InvalidInput(format!(
                "sampling rate {sampling_rate_hz} Hz"
            )));
        }
        if samples.rank() != 2 || samples.shape.iter().any(|&d| d == 0) {
            return Err(SignalError::InvalidInput(format!(
                "EEG samples must be [channels, time], got {:?}",
                samples.shape
            )));
        }
        if !samples.is_finite() {
            return Err(SignalError::InvalidInput(
                "EEG samples contain non-finite values".into(),
            ));
        }
        Ok(EEGRecording {
            sampling_rate_hz,
            samples,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.shape[0]
    }

    pub fn n_samples(&self) -> usize {
        self.samples.shape[1]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate_hz
    }
}

/// Per-channel magnitude spectrogram on a uniform time grid.
#[derive(Debug, Clone)]
pub struct EEGSpectrogram {
    pub step_seconds: f64,
    /// [channels, freq_bins, time_steps]
    pub values: NdArray,
}

impl EEGSpectrogram {
    pub fn channels(&self) -> usize {
        self.values.shape[0]
    }

    pub fn freq_bins(&self) -> usize {
        self.values.shape[1]
    }

    pub fn time_steps(&self) -> usize {
        self.values.shape[2]
    }
}

/// BOLD volume series on a uniform TR grid.
#[derive(Debug, Clone)]
pub struct FMRIVolumeSeries {
    pub tr_seconds: f64,
    /// [time, x, y, z]
    pub volumes: NdArray,
    pub log_scaled: bool,
}

impl FMRIVolumeSeries {
    pub fn new(tr_seconds: f64, volumes: NdArray, log_scaled: bool) -> Result<Self> {
        if !(tr_seconds > 0.0) {
            return Err(SignalError::InvalidStep { step_s: tr_seconds });
        }
        if volumes.rank() != 4 || volumes.shape.iter().any(|&d| d == 0) {
            return Err(SignalError::InvalidInput(format!(
                "fMRI volumes must be [time, x, y, z], got {:?}",
                volumes.shape
            )));
        }
        if !volumes.is_finite() {
            return Err(SignalError::InvalidInput(
                "fMRI volumes contain non-finite values".into(),
            ));
        }
        Ok(FMRIVolumeSeries {
            tr_seconds,
            volumes,
            log_scaled,
        })
    }

    pub fn time_steps(&self) -> usize {
        self.volumes.shape[0]
    }

    pub fn grid(&self) -> [usize; 3] {
        [
            self.volumes.shape[1],
            self.volumes.shape[2],
            self.volumes.shape[3],
        ]
    }

    pub fn voxels_per_volume(&self) -> usize {
        self.volumes.numel() / self.time_steps()
    }
}

/// One EEG window paired with its haemodynamically shifted fMRI window.
#[derive(Debug, Clone)]
pub struct AlignedWindow {
    /// [channels, freq_bins, window_steps]
    pub eeg: Rc<NdArray>,
    /// [window_steps, x, y, z]
    pub fmri: Rc<NdArray>,
    pub t_eeg_s: f64,
    pub t_fmri_s: f64,
}

/// Magnitude STFT over non-overlapping rectangular windows. One-sided
/// spectrum: freq_bins = window_samples/2 + 1; frame step equals the window.
pub fn stft(rec: &EEGRecording, window_seconds: f64) -> Result<EEGSpectrogram> {
    let ws_real = window_seconds * rec.sampling_rate_hz;
    let ws = ws_real.round();
    if !(window_seconds > 0.0) || (ws_real - ws).abs() > STEP_EPS || ws < 1.0 {
        return Err(SignalError::NonIntegerWindow {
            window_s: window_seconds,
            sampling_rate_hz: rec.sampling_rate_hz,
        });
    }
    let ws = ws as usize;
    let frames = rec.n_samples() / ws;
    if frames == 0 {
        return Err(SignalError::WindowTooLong {
            window_s: window_seconds,
            duration_s: rec.duration_s(),
        });
    }
    let bins = ws / 2 + 1;
    let channels = rec.channels();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(ws);
    let mut values = vec![0.0; channels * bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); ws];
    for c in 0..channels {
        let row = &rec.samples.data[c * rec.n_samples()..(c + 1) * rec.n_samples()];
        for t in 0..frames {
            for (slot, &x) in buf.iter_mut().zip(&row[t * ws..(t + 1) * ws]) {
                *slot = Complex::new(x, 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                values[c * bins * frames + f * frames + t] = buf[f].norm();
            }
        }
    }
    Ok(EEGSpectrogram {
        step_seconds: window_seconds,
        values: NdArray {
            shape: vec![channels, bins, frames],
            data: values,
        },
    })
}

/// Replaces every voxel value v by ln(v + eps_offset) and marks the series.
pub fn log_scale(fmri: &FMRIVolumeSeries, eps_offset: f64) -> Result<FMRIVolumeSeries> {
    if fmri.log_scaled {
        return Err(SignalError::AlreadyScaled);
    }
    let mut data = Vec::with_capacity(fmri.volumes.numel());
    for &v in &fmri.volumes.data {
        let w = (v + eps_offset).ln();
        if !w.is_finite() {
            return Err(SignalError::NonFiniteLog { value: v });
        }
        data.push(w);
    }
    Ok(FMRIVolumeSeries {
        tr_seconds: fmri.tr_seconds,
        volumes: NdArray {
            shape: fmri.volumes.shape.clone(),
            data,
        },
        log_scaled: true,
    })
}

/// Block-mean spatial downsampling: output dims are ceil(dim/factor) per
/// spatial axis; trailing partial blocks average over their actual members.
pub fn downsample_spatial(fmri: &FMRIVolumeSeries, factor: usize) -> Result<FMRIVolumeSeries> {
    if factor == 0 {
        return Err(SignalError::InvalidFactor { factor });
    }
    if factor == 1 {
        return Ok(fmri.clone());
    }
    let [x, y, z] = fmri.grid();
    let t_len = fmri.time_steps();
    let ox = x.div_ceil(factor);
    let oy = y.div_ceil(factor);
    let oz = z.div_ceil(factor);
    let mut data = Vec::with_capacity(t_len * ox * oy * oz);
    let src = &fmri.volumes.data;
    for t in 0..t_len {
        let vol = &src[t * x * y * z..(t + 1) * x * y * z];
        for bx in 0..ox {
            for by in 0..oy {
                for bz in 0..oz {
                    let x_end = ((bx + 1) * factor).min(x);
                    let y_end = ((by + 1) * factor).min(y);
                    let z_end = ((bz + 1) * factor).min(z);
                    let mut acc = 0.0;
                    let mut count = 0usize;
                    for xi in bx * factor..x_end {
                        for yi in by * factor..y_end {
                            for zi in bz * factor..z_end {
                                acc += vol[xi * y * z + yi * z + zi];
                                count += 1;
                            }
                        }
                    }
                    data.push(acc / count as f64);
                }
            }
        }
    }
    FMRIVolumeSeries::new(
        fmri.tr_seconds,
        NdArray {
            shape: vec![t_len, ox, oy, oz],
            data,
        },
        fmri.log_scaled,
    )
}

/// Linear interpolation of `values` along `time_axis` from a src_step grid
/// onto a dst_step grid spanning the same duration.
pub fn resample_time(
    values: &NdArray,
    time_axis: usize,
    src_step_s: f64,
    dst_step_s: f64,
) -> Result<NdArray> {
    if !(src_step_s > 0.0) {
        return Err(SignalError::InvalidStep { step_s: src_step_s });
    }
    if !(dst_step_s > 0.0) {
        return Err(SignalError::InvalidStep { step_s: dst_step_s });
    }
    if time_axis >= values.rank() {
        return Err(SignalError::InvalidInput(format!(
            "time axis {} out of range for shape {:?}",
            time_axis, values.shape
        )));
    }
    let n = values.shape[time_axis];
    if n < 2 {
        return Err(SignalError::TooFewPoints { points: n });
    }
    if (src_step_s - dst_step_s).abs() <= STEP_EPS * src_step_s.max(dst_step_s) {
        return Ok(values.clone());
    }

    // Move time to the front, interpolate [n, rest] rows, move it back.
    let rank = values.rank();
    let mut fwd_axes: Vec<usize> = vec![time_axis];
    fwd_axes.extend((0..rank).filter(|&a| a != time_axis));
    let (front, front_shape) = nd::permute_data(&values.data, &values.shape, &fwd_axes);
    let rest: usize = front_shape[1..].iter().product();

    let span = (n - 1) as f64 * src_step_s;
    let m = ((span / dst_step_s) + 1e-9).floor() as usize + 1;
    let mut out = vec![0.0; m * rest];
    for j in 0..m {
        let pos = (j as f64 * dst_step_s) / src_step_s;
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = pos - i0 as f64;
        let a = &front[i0 * rest..(i0 + 1) * rest];
        let b = &front[i1 * rest..(i1 + 1) * rest];
        let row = &mut out[j * rest..(j + 1) * rest];
        for ((slot, &va), &vb) in row.iter_mut().zip(a).zip(b) {
            *slot = va * (1.0 - frac) + vb * frac;
        }
    }
    let mut resampled_shape = front_shape;
    resampled_shape[0] = m;
    let inv = nd::inverse_axes(&fwd_axes);
    let (back, back_shape) = nd::permute_data(&out, &resampled_shape, &inv);
    Ok(NdArray {
        shape: back_shape,
        data: back,
    })
}

/// Resamples a spectrogram's time axis onto a new step.
pub fn resample_spectrogram(spec: &EEGSpectrogram, dst_step_s: f64) -> Result<EEGSpectrogram> {
    let values = resample_time(&spec.values, 2, spec.step_seconds, dst_step_s)?;
    Ok(EEGSpectrogram {
        step_seconds: dst_step_s,
        values,
    })
}

/// Resamples a volume series' time axis onto a new TR.
pub fn resample_volumes(fmri: &FMRIVolumeSeries, dst_step_s: f64) -> Result<FMRIVolumeSeries> {
    let volumes = resample_time(&fmri.volumes, 0, fmri.tr_seconds, dst_step_s)?;
    FMRIVolumeSeries::new(dst_step_s, volumes, fmri.log_scaled)
}

fn as_step_count(value_s: f64, step_s: f64) -> Option<usize> {
    let real = value_s / step_s;
    let rounded = real.round();
    if (real - rounded).abs() <= STEP_EPS && rounded >= 0.0 {
        Some(rounded as usize)
    } else {
        None
    }
}

/// Cuts both modalities into aligned windows: the EEG window starting at
/// t pairs with the fMRI window starting at t + shift_s. A window starting
/// at t fits a modality iff t + window_s lies within the last sample time
/// (steps - 1) * step. The trailing remainder is discarded.
pub fn partition_windows(
    eeg: &EEGSpectrogram,
    fmri: &FMRIVolumeSeries,
    window_s: f64,
    shift_s: f64,
) -> Result<Vec<AlignedWindow>> {
    let step = eeg.step_seconds;
    if (step - fmri.tr_seconds).abs() > STEP_EPS * step.max(fmri.tr_seconds) {
        return Err(SignalError::StepMismatch {
            eeg_step_s: step,
            fmri_step_s: fmri.tr_seconds,
        });
    }
    let w = match as_step_count(window_s, step) {
        Some(w) if w >= 1 => w,
        _ => {
            return Err(SignalError::WindowNotMultiple {
                window_s,
                step_s: step,
            })
        }
    };
    let s = match as_step_count(shift_s, step) {
        Some(s) => s,
        None => {
            return Err(SignalError::ShiftNotMultiple {
                shift_s,
                step_s: step,
            })
        }
    };

    let n_eeg = eeg.time_steps();
    let n_fmri = fmri.time_steps();
    let mut windows = Vec::new();
    let mut j = 0usize;
    loop {
        let start = j * w;
        // Fit rule: the window's end time must not pass the last sample time.
        if start + w > n_eeg - 1 || start + s + w > n_fmri - 1 {
            break;
        }
        windows.push(AlignedWindow {
            eeg: Rc::new(slice_spectrogram(eeg, start, w)),
            fmri: Rc::new(slice_volumes(fmri, start + s, w)),
            t_eeg_s: start as f64 * step,
            t_fmri_s: (start + s) as f64 * step,
        });
        j += 1;
    }
    if windows.is_empty() {
        return Err(SignalError::RecordingTooShort {
            window_s,
            shift_s,
            available_s: (n_eeg.min(n_fmri).saturating_sub(1)) as f64 * step,
        });
    }
    Ok(windows)
}

/// [C, F, T] -> [C, F, len] starting at time index `start`.
fn slice_spectrogram(spec: &EEGSpectrogram, start: usize, len: usize) -> NdArray {
    let (c, f, t) = (spec.channels(), spec.freq_bins(), spec.time_steps());
    let mut data = Vec::with_capacity(c * f * len);
    for lead in 0..c * f {
        let row = &spec.values.data[lead * t..lead * t + t];
        data.extend_from_slice(&row[start..start + len]);
    }
    NdArray {
        shape: vec![c, f, len],
        data,
    }
}

/// [T, x, y, z] -> [len, x, y, z] starting at time index `start`.
fn slice_volumes(fmri: &FMRIVolumeSeries, start: usize, len: usize) -> NdArray {
    let vox = fmri.voxels_per_volume();
    let data = fmri.volumes.data[start * vox..(start + len) * vox].to_vec();
    let mut shape = fmri.volumes.shape.clone();
    shape[0] = len;
    NdArray { shape, data }
}
