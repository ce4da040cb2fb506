/// One control step of recorded simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Clock at the end of the step, s.
    pub time_s: f64,
    pub observables: Vec<f64>,
    pub log: Vec<f64>,
    /// Asset settings applied during the step, in asset order.
    pub settings: Vec<f64>,
    /// Volume shed above max depth during the step, per floodable node, m³.
    pub flood_m3: Vec<f64>,
    /// Average flow absorbed per outfall over the step, m³/s.
    pub outfall_m3s: Vec<f64>,
    pub performance_cumulative: f64,
}

/// Column-labelled record of a full run. Rendering is deterministic:
/// identical runs produce byte-identical CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub observable_columns: Vec<String>,
    pub log_columns: Vec<String>,
    pub setting_columns: Vec<String>,
    /// Ids of nodes that can flood, in network order.
    pub flood_nodes: Vec<String>,
    /// Outfall ids, in network order.
    pub outfall_nodes: Vec<String>,
    pub records: Vec<StepRecord>,
}

impl SimTrace {
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["time_s".to_string()];
        cols.extend(self.observable_columns.iter().cloned());
        cols.extend(self.log_columns.iter().cloned());
        cols.extend(self.setting_columns.iter().map(|id| format!("{id}.setting")));
        cols.extend(self.flood_nodes.iter().map(|id| format!("flood_{id}")));
        cols.extend(self.outfall_nodes.iter().map(|id| format!("outfall_{id}")));
        cols.push("performance_cumulative".to_string());
        cols
    }

    /// Render with LF line endings and shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header().join(","));
        out.push('\n');
        for rec in &self.records {
            let mut row: Vec<String> = Vec::with_capacity(self.header().len());
            row.push(fmt(rec.time_s));
            row.extend(rec.observables.iter().map(|&v| fmt(v)));
            row.extend(rec.log.iter().map(|&v| fmt(v)));
            row.extend(rec.settings.iter().map(|&v| fmt(v)));
            row.extend(rec.flood_m3.iter().map(|&v| fmt(v)));
            row.extend(rec.outfall_m3s.iter().map(|&v| fmt(v)));
            row.push(fmt(rec.performance_cumulative));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn final_performance(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.performance_cumulative)
            .unwrap_or(0.0)
    }

    /// Largest summed outfall flow over any step, m³/s.
    pub fn peak_outfall_m3s(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.outfall_m3s.iter().sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn total_flood_m3(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.flood_m3.iter().sum::<f64>())
            .sum()
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}
