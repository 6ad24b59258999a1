//! Figure-data emission: turn a batch summary into plottable CSV tables
//! (detection fractions per declared type, identified power levels with
//! class annotations, daily/overall consumption-fraction distributions).

use crate::batch::{BatchSummary, Histogram, POWER_CLASS_BOUNDARIES_KW};

pub fn detection_fractions_csv(summary: &BatchSummary) -> String {
    let mut out = String::from("group,households,detections,detection_fraction\n");
    for (group, stats) in &summary.groups {
        out.push_str(&format!(
            "{group},{},{},{}\n",
            stats.households, stats.detections, stats.detection_fraction
        ));
    }
    out
}

fn power_class(bin_low: f64, bin_high: f64) -> &'static str {
    let mid = (bin_low + bin_high) / 2.0;
    let b = POWER_CLASS_BOUNDARIES_KW;
    if mid >= b[0] && mid < b[1] {
        "low"
    } else if mid >= b[1] && mid < b[2] {
        "medium"
    } else if mid >= b[2] && mid < b[3] {
        "high"
    } else {
        ""
    }
}

pub fn power_histogram_csv(summary: &BatchSummary) -> String {
    let h = &summary.power_histogram;
    let mut out = String::from("bin_low_kw,bin_high_kw,count,power_class\n");
    for (i, count) in h.counts.iter().enumerate() {
        let lo = h.lo + h.bin_width * i as f64;
        let hi = lo + h.bin_width;
        out.push_str(&format!("{lo},{hi},{count},{}\n", power_class(lo, hi)));
    }
    out
}

pub fn fraction_histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_low,bin_high,count\n");
    for (i, count) in h.counts.iter().enumerate() {
        let lo = h.lo + h.bin_width * i as f64;
        let hi = lo + h.bin_width;
        out.push_str(&format!("{lo},{hi},{count}\n"));
    }
    out
}
