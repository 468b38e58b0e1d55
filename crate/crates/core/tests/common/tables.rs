//! Reference layer tables at 640 px and base width 32, transcribed row by row
//! as (name, input feature maps, output feature maps). Shapes are H x W x C.

pub type Row = (&'static str, &'static [&'static str], &'static str);

pub const SEG_ROWS: &[Row] = &[
    ("Conv layer - 1a", &["640 x 640 x 1"], "640 x 640 x 32"),
    ("Conv layer - 1b", &["640 x 640 x 32"], "640 x 640 x 32"),
    ("Max pool - 1", &["640 x 640 x 32"], "320 x 320 x 32"),
    ("Conv layer - 2a", &["320 x 320 x 32"], "320 x 320 x 64"),
    ("Conv layer - 2b", &["320 x 320 x 64"], "320 x 320 x 64"),
    ("Max pool - 2", &["320 x 320 x 64"], "160 x 160 x 64"),
    ("Conv layer - 3a", &["160 x 160 x 64"], "160 x 160 x 128"),
    ("Conv layer - 3b", &["160 x 160 x 128"], "160 x 160 x 128"),
    ("Max pool - 3", &["160 x 160 x 128"], "80 x 80 x 128"),
    ("Conv layer - 4a", &["80 x 80 x 128"], "80 x 80 x 256"),
    ("Conv layer - 4b", &["80 x 80 x 256"], "80 x 80 x 256"),
    ("Max pool - 4", &["80 x 80 x 256"], "40 x 40 x 256"),
    ("Conv layer - 5a", &["40 x 40 x 256"], "40 x 40 x 512"),
    ("Conv layer - 5b", &["40 x 40 x 512"], "40 x 40 x 512"),
    ("Upsample - 1", &["40 x 40 x 512"], "80 x 80 x 512"),
    ("Concat - 1", &["80 x 80 x 512", "80 x 80 x 256"], "80 x 80 x 768"),
    ("Conv layer - 6a", &["80 x 80 x 768"], "80 x 80 x 256"),
    ("Conv layer - 6b", &["80 x 80 x 256"], "80 x 80 x 256"),
    ("Upsample - 2", &["80 x 80 x 256"], "160 x 160 x 256"),
    ("Concat - 2", &["160 x 160 x 256", "160 x 160 x 128"], "160 x 160 x 384"),
    ("Conv layer - 7a", &["160 x 160 x 384"], "160 x 160 x 128"),
    ("Conv layer - 7b", &["160 x 160 x 128"], "160 x 160 x 128"),
    ("Upsample - 3", &["160 x 160 x 128"], "320 x 320 x 128"),
    ("Concat - 3", &["320 x 320 x 128", "320 x 320 x 64"], "320 x 320 x 192"),
    ("Conv layer - 8a", &["320 x 320 x 192"], "320 x 320 x 64"),
    ("Conv layer - 8b", &["320 x 320 x 64"], "320 x 320 x 64"),
    ("Upsample - 4", &["320 x 320 x 64"], "640 x 640 x 64"),
    ("Concat - 4", &["640 x 640 x 64", "640 x 640 x 32"], "640 x 640 x 96"),
    ("Conv layer - 9a", &["640 x 640 x 96"], "640 x 640 x 32"),
    ("Conv layer - 9b", &["640 x 640 x 32"], "640 x 640 x 32"),
    ("Output layer", &["640 x 640 x 32"], "640 x 640 x 1"),
];

pub const VAE_ROWS: &[Row] = &[
    ("Conv layer - 1a", &["640 x 640 x 1"], "640 x 640 x 32"),
    ("Conv layer - 1b", &["640 x 640 x 32"], "640 x 640 x 32"),
    ("Max pool - 1", &["640 x 640 x 32"], "320 x 320 x 32"),
    ("Conv layer - 2a", &["320 x 320 x 32"], "320 x 320 x 64"),
    ("Conv layer - 2b", &["320 x 320 x 64"], "320 x 320 x 64"),
    ("Max pool - 2", &["320 x 320 x 64"], "160 x 160 x 64"),
    ("Conv layer - 3a", &["160 x 160 x 64"], "160 x 160 x 128"),
    ("Conv layer - 3b", &["160 x 160 x 128"], "160 x 160 x 128"),
    ("Max pool - 3", &["160 x 160 x 128"], "80 x 80 x 128"),
    ("encoder conv - 4a", &["80 x 80 x 128"], "80 x 80 x 512"),
    ("encoder conv - 4b", &["80 x 80 x 512"], "80 x 80 x 1"),
    ("encoder dense - mu", &["80 x 80 x 1"], "6400"),
    ("encoder dense - sigma", &["80 x 80 x 1"], "6400"),
    ("sampling - 1", &["6400", "6400"], "6400"),
    ("reshape - 1", &["6400"], "80 x 80 x 1"),
    ("Conv transpose - 1", &["80 x 80 x 1"], "160 x 160 x 64"),
    ("Conv layer - 5a", &["160 x 160 x 64"], "160 x 160 x 64"),
    ("Conv layer - 5b", &["160 x 160 x 64"], "160 x 160 x 64"),
    ("Conv transpose - 2", &["160 x 160 x 64"], "320 x 320 x 32"),
    ("Conv layer - 6a", &["320 x 320 x 32"], "320 x 320 x 32"),
    ("Conv layer - 6b", &["320 x 320 x 32"], "320 x 320 x 32"),
    ("Upsample - 3", &["320 x 320 x 32"], "640 x 640 x 32"),
    ("Conv layer - 7a", &["640 x 640 x 32"], "640 x 640 x 32"),
    ("Conv layer - 7b", &["640 x 640 x 32"], "640 x 640 x 32"),
    ("Output layer", &["640 x 640 x 32"], "640 x 640 x 2"),
    ("Sigmoid layer", &["640 x 640 x 2"], "640 x 640 x 2"),
];

pub const PRED_ROWS: &[Row] = &[
    ("Concat - input", &["640 x 640 x 1", "640 x 640 x 1"], "640 x 640 x 2"),
    ("Conv layer - 1a", &["640 x 640 x 2"], "640 x 640 x 32"),
    ("Conv layer - 1b", &["640 x 640 x 32"], "640 x 640 x 32"),
    ("Max pool - 1", &["640 x 640 x 32"], "320 x 320 x 32"),
    ("Conv layer - 2a", &["320 x 320 x 32"], "320 x 320 x 64"),
    ("Conv layer - 2b", &["320 x 320 x 64"], "320 x 320 x 64"),
    ("Max pool - 2", &["320 x 320 x 64"], "160 x 160 x 64"),
    ("Conv layer - 3a", &["160 x 160 x 64"], "160 x 160 x 128"),
    ("Conv layer - 3b", &["160 x 160 x 128"], "160 x 160 x 128"),
    ("Max pool - 3", &["160 x 160 x 128"], "80 x 80 x 128"),
    ("Conv layer - 4a", &["80 x 80 x 128"], "80 x 80 x 256"),
    ("Conv layer - 4b", &["80 x 80 x 256"], "80 x 80 x 256"),
    ("Upsample - 2", &["80 x 80 x 256"], "160 x 160 x 256"),
    ("Concat - 2", &["160 x 160 x 256", "160 x 160 x 128"], "160 x 160 x 384"),
    ("Conv layer - 7a", &["160 x 160 x 384"], "160 x 160 x 128"),
    ("Conv layer - 7b", &["160 x 160 x 128"], "160 x 160 x 128"),
    ("Upsample - 3", &["160 x 160 x 128"], "320 x 320 x 128"),
    ("Concat - 3", &["320 x 320 x 128", "320 x 320 x 64"], "320 x 320 x 192"),
    ("Conv layer - 8a", &["320 x 320 x 192"], "320 x 320 x 64"),
    ("Conv layer - 8b", &["320 x 320 x 64"], "320 x 320 x 64"),
    ("Upsample - 4", &["320 x 320 x 64"], "640 x 640 x 64"),
    ("Concat - 4", &["640 x 640 x 64", "640 x 640 x 32"], "640 x 640 x 96"),
    ("Conv layer - 9a", &["640 x 640 x 96"], "640 x 640 x 32"),
    ("Conv layer - 9b", &["640 x 640 x 32"], "640 x 640 x 32"),
    ("Output layer", &["640 x 640 x 32"], "640 x 640 x 1"),
];

/// Row-by-row mismatches between a traced program and a table; empty when
/// they agree.
pub fn trace_mismatches(trace: &[errornet::nn::TraceRow], rows: &[Row]) -> Vec<String> {
    let mut out = Vec::new();
    if trace.len() != rows.len() {
        out.push(format!("{} traced layers, {} table rows", trace.len(), rows.len()));
    }
    for (t, (name, inputs, output)) in trace.iter().zip(rows) {
        let got_in: Vec<String> = t.inputs.iter().map(|s| s.to_string()).collect();
        let got_out = t.output.to_string();
        if got_in != *inputs || got_out != *output {
            out.push(format!(
                "{name} ({}): got {:?} -> {}, table {:?} -> {}",
                t.label, got_in, got_out, inputs, output
            ));
        }
    }
    out
}
