//! Attention contribution `cont_ij = || sum_h attn^h_ij v^h_j W_o^h ||_2`
//! and unintended-attention counting over attribute/object slots.

use std::io::Write;
use std::path::Path;

use crate::encoder::{encode, AttentionTrace, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{Real, Tensor};
use crate::plot;
use crate::synthworld::PromptTemplate;

#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMatrix<R = f32> {
    pub layer: usize,
    /// Whether the source trace was causal (selects the counting rule).
    pub causal: bool,
    /// `n x n` norms.
    pub cont: Tensor<R>,
    /// Row `i*n + j` is the pre-norm vector `sum_h attn^h_ij v^h_j W_o^h`.
    pub vectors: Tensor<R>,
}

impl<R: Real> ContributionMatrix<R> {
    pub fn n(&self) -> usize {
        self.cont.rows()
    }

    pub fn vector(&self, i: usize, j: usize) -> &[R] {
        self.vectors.row(i * self.n() + j)
    }

    pub fn at(&self, i: usize, j: usize) -> R {
        self.cont.at(i, j)
    }
}

/// Contribution matrix of `layer`, computed from the captured trace.
pub fn attention_contribution<R: Real>(trace: &AttentionTrace<R>, layer: usize) -> Result<ContributionMatrix<R>> {
    let lt = trace.layers.get(layer).ok_or_else(|| Error::OutOfRange {
        what: "layer",
        value: format!("{layer} (trace has {})", trace.layers.len()),
    })?;
    let (n, heads, dh) = (lt.v.rows(), lt.heads(), lt.head_dim());
    let d = lt.wo.cols();
    // u[h][j] = v^h_j W_o^h
    let mut u = vec![Tensor::<R>::zeros(&[n, d]); heads];
    for (h, uh) in u.iter_mut().enumerate() {
        for j in 0..n {
            let vj = &lt.v.row(j)[h * dh..(h + 1) * dh];
            let row = uh.row_mut(j);
            for (k, &vk) in vj.iter().enumerate() {
                for (o, &w) in row.iter_mut().zip(lt.wo.row(h * dh + k)) {
                    *o += vk * w;
                }
            }
        }
    }
    let mut vectors = Tensor::zeros(&[n * n, d]);
    let mut cont = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let row = vectors.row_mut(i * n + j);
            for (h, uh) in u.iter().enumerate() {
                let a = lt.attn[h].at(i, j);
                if a == R::zero() {
                    continue;
                }
                for (o, &x) in row.iter_mut().zip(uh.row(j)) {
                    *o += a * x;
                }
            }
            let norm = row.iter().map(|&x| x * x).sum::<R>().sqrt();
            cont.set(i, j, norm);
        }
    }
    Ok(ContributionMatrix {
        layer,
        causal: trace.causal,
        cont,
        vectors,
    })
}

/// Contribution matrices for every layer of `trace`.
pub fn all_contributions<R: Real>(trace: &AttentionTrace<R>) -> Vec<ContributionMatrix<R>> {
    (0..trace.layers.len())
        .map(|l| attention_contribution(trace, l).expect("layer in range"))
        .collect()
}

/// Slot contributions of one layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotContributions {
    pub o2a1: f64,
    pub o2a2: f64,
    pub o1a1: f64,
    pub o1a2: f64,
}

impl SlotContributions {
    /// Causal rule: `cont[o2,a1] > cont[o2,a2]`. The bidirectional rule
    /// also counts `cont[o1,a2] > cont[o1,a1]`. Ties never count.
    pub fn unintended(&self, causal: bool) -> bool {
        self.o2a1 > self.o2a2 || (!causal && self.o1a2 > self.o1a1)
    }
}

pub fn slot_contributions<R: Real>(template: &PromptTemplate, m: &ContributionMatrix<R>) -> Result<SlotContributions> {
    let s = template.slots.pair()?;
    if s.o2 >= m.n() {
        return Err(Error::Shape(format!("slot {} outside {}-token contribution matrix", s.o2, m.n())));
    }
    Ok(SlotContributions {
        o2a1: m.at(s.o2, s.a1).as_f64(),
        o2a2: m.at(s.o2, s.a2).as_f64(),
        o1a1: m.at(s.o1, s.a1).as_f64(),
        o1a2: m.at(s.o1, s.a2).as_f64(),
    })
}

/// Number of layers with unintended attention.
pub fn count_unintended<R: Real>(template: &PromptTemplate, contributions: &[ContributionMatrix<R>]) -> Result<usize> {
    let mut count = 0;
    for m in contributions {
        if slot_contributions(template, m)?.unintended(m.causal) {
            count += 1;
        }
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub prompt_id: String,
    pub layer: usize,
    pub slots: SlotContributions,
    pub unintended: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnintendedReport {
    pub encoder_tag: String,
    pub dataset_tag: String,
    pub layers: usize,
    /// `(prompt_id, count)` in prompt order.
    pub counts: Vec<(String, usize)>,
    pub rows: Vec<ReportRow>,
}

impl UnintendedReport {
    pub fn mean_count(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().map(|c| c.1 as f64).sum::<f64>() / self.counts.len() as f64
    }

    /// Number of prompts per count `0..=layers`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.layers + 1];
        for &(_, c) in &self.counts {
            h[c] += 1;
        }
        h
    }
}

pub fn prompt_id(index: usize) -> String {
    format!("p{index:03}")
}

/// Counts unintended layers for each prompt under `encoder`.
pub fn unintended_report(
    encoder: &EncoderParams,
    encoder_tag: &str,
    dataset_tag: &str,
    prompts: &[PromptTemplate],
) -> Result<(UnintendedReport, Vec<Vec<ContributionMatrix>>)> {
    let mut report = UnintendedReport {
        encoder_tag: encoder_tag.to_string(),
        dataset_tag: dataset_tag.to_string(),
        layers: encoder.config.layers,
        counts: Vec::new(),
        rows: Vec::new(),
    };
    let mut all = Vec::with_capacity(prompts.len());
    for (i, p) in prompts.iter().enumerate() {
        let (_, trace) = encode(encoder, &p.tokens, None)?;
        let conts = all_contributions(&trace);
        let id = prompt_id(i);
        let mut count = 0;
        for m in &conts {
            let slots = slot_contributions(p, m)?;
            let unintended = slots.unintended(m.causal);
            count += unintended as usize;
            report.rows.push(ReportRow {
                prompt_id: id.clone(),
                layer: m.layer,
                slots,
                unintended,
            });
        }
        report.counts.push((id, count));
        all.push(conts);
    }
    Ok((report, all))
}

/// Runs both encoders over `prompts`. With `out_dir`, writes
/// `unintended.csv`, `unintended_hist.png` and per-encoder heatmaps
/// `heatmaps/{tag}/{prompt_id}_{layer}.png`; nothing is written for an empty
/// prompt list.
pub fn compare_encoders(
    a: (&EncoderParams, &str),
    b: (&EncoderParams, &str),
    dataset_tag: &str,
    prompts: &[PromptTemplate],
    out_dir: Option<&Path>,
) -> Result<(UnintendedReport, UnintendedReport)> {
    if a.0.config.vocab != b.0.config.vocab {
        return Err(Error::Vocabulary(format!(
            "encoders disagree on vocabulary size ({} vs {})",
            a.0.config.vocab, b.0.config.vocab
        )));
    }
    let (ra, ca) = unintended_report(a.0, a.1, dataset_tag, prompts)?;
    let (rb, cb) = unintended_report(b.0, b.1, dataset_tag, prompts)?;
    if let (Some(dir), false) = (out_dir, prompts.is_empty()) {
        std::fs::create_dir_all(dir)?;
        write_report_csv(&dir.join("unintended.csv"), &[&ra, &rb])?;
        let ha: Vec<f64> = ra.histogram().iter().map(|&v| v as f64).collect();
        let hb: Vec<f64> = rb.histogram().iter().map(|&v| v as f64).collect();
        plot::bar_chart(&dir.join("unintended_hist.png"), &[ha, hb])?;
        for (report, conts) in [(&ra, &ca), (&rb, &cb)] {
            let hdir = dir.join("heatmaps").join(&report.encoder_tag);
            std::fs::create_dir_all(&hdir)?;
            for (i, per_layer) in conts.iter().enumerate() {
                for m in per_layer {
                    let vals: Vec<f64> = m.cont.data().iter().map(|v| v.as_f64()).collect();
                    plot::heatmap(&hdir.join(format!("{}_{}.png", prompt_id(i), m.layer)), &vals, m.n(), m.n(), 12)?;
                }
            }
        }
    }
    Ok((ra, rb))
}

pub fn write_report_csv(path: &Path, reports: &[&UnintendedReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "prompt_id,encoder_tag,layer,cont_o2a1,cont_o2a2,cont_o1a1,cont_o1a2,unintended")?;
    for r in reports {
        for row in &r.rows {
            let s = row.slots;
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                row.prompt_id, r.encoder_tag, row.layer, s.o2a1, s.o2a2, s.o1a1, s.o1a2, row.unintended
            )?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Head-averaged raw attention next to the contribution matrix.
pub fn attention_map_vs_contribution<R: Real>(trace: &AttentionTrace<R>, layer: usize) -> Result<(Tensor<R>, Tensor<R>)> {
    let m = attention_contribution(trace, layer)?;
    let attn = &trace.layers[layer].attn;
    let mut mean = attn[0].clone();
    for a in &attn[1..] {
        mean.add_assign(a);
    }
    mean.scale(R::one() / R::of(attn.len() as f64));
    Ok((mean, m.cont))
}

#[cfg(test)]
mod tests;
