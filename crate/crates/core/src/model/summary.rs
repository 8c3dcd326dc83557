use std::fmt::Write;

use crate::blocks::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub flops: u64,
}

/// Per-layer trainable parameters and FLOPs of one forward pass (batch 1).
///
/// FLOPs: convolutions and dense layers count 2 per multiply-accumulate plus
/// one per bias add; elementwise ops and activations 1 per output element;
/// batch normalization 2 per element; pooling 1 per input element.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub rows: Vec<LayerRow>,
    pub total_params: usize,
    pub total_flops: u64,
}

fn owner(param: &str) -> &str {
    param.rsplit_once('.').map_or("", |(o, _)| o)
}

impl ModelSummary {
    /// Joins tape scope accounting with the parameters each scope owns (a
    /// parameter `a.b.w` belongs to scope `a.b`).
    pub fn from_trace(scopes: &[(String, u64, Vec<usize>)], store: &ParamStore<f32>) -> Self {
        let mut rows: Vec<LayerRow> = scopes
            .iter()
            .map(|(name, flops, shape)| LayerRow {
                name: name.clone(),
                output_shape: shape.clone(),
                params: 0,
                flops: *flops,
            })
            .collect();
        for p in store.params() {
            let o = owner(&p.name);
            match rows.iter_mut().find(|r| r.name == o) {
                Some(r) => r.params += p.value.numel(),
                None => rows.push(LayerRow {
                    name: o.to_string(),
                    output_shape: Vec::new(),
                    params: p.value.numel(),
                    flops: 0,
                }),
            }
        }
        rows.retain(|r| r.params > 0 || r.flops > 0);
        ModelSummary {
            total_params: rows.iter().map(|r| r.params).sum(),
            total_flops: rows.iter().map(|r| r.flops).sum(),
            rows,
        }
    }

    /// Totals per top-level block (`encoder`, `cascade`, ...), in first-seen order.
    pub fn block_totals(&self) -> Vec<(String, usize, u64)> {
        let mut out: Vec<(String, usize, u64)> = Vec::new();
        for r in &self.rows {
            let block = r.name.split('.').next().unwrap_or("").to_string();
            match out.iter_mut().find(|b| b.0 == block) {
                Some(b) => {
                    b.1 += r.params;
                    b.2 += r.flops;
                }
                None => out.push((block, r.params, r.flops)),
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let shape = |s: &[usize]| {
            s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
        };
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        writeln!(out, "{:<w$}  {:>14}  {:>10}  {:>14}", "layer", "output", "params", "flops").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<w$}  {:>14}  {:>10}  {:>14}",
                r.name,
                shape(&r.output_shape),
                r.params,
                r.flops
            )
            .unwrap();
        }
        writeln!(out, "{}", "-".repeat(w + 44)).unwrap();
        for (b, p, f) in self.block_totals() {
            writeln!(out, "{:<w$}  {:>14}  {:>10}  {:>14}", b, "", p, f).unwrap();
        }
        writeln!(out, "{:<w$}  {:>14}  {:>10}  {:>14}", "total", "", self.total_params, self.total_flops).unwrap();
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,output_shape,params,flops\n");
        for r in &self.rows {
            let s = r.output_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            writeln!(out, "{},{},{},{}", r.name, s, r.params, r.flops).unwrap();
        }
        writeln!(out, "total,,{},{}", self.total_params, self.total_flops).unwrap();
        out
    }
}
