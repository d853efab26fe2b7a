use std::io::Write;

use crate::error::Result;
use crate::levy_model::JumpEvent;

use super::PathRecord;

/// One row per grid node: `time, x_1..x_d, j_11..j_dd (row-major), is_jump`.
pub fn write_path_csv<const D: usize, W: Write>(path: &PathRecord<D>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((1..=D).map(|i| format!("x{i}")));
    for i in 1..=D {
        header.extend((1..=D).map(|j| format!("j{i}{j}")));
    }
    header.push("is_jump".into());
    w.write_record(&header)?;
    for k in 0..path.grid.len() {
        let mut row = vec![format!("{:e}", path.grid[k])];
        row.extend(path.states[k].iter().map(|v| format!("{v:e}")));
        for i in 0..D {
            row.extend((0..D).map(|j| format!("{:e}", path.jacobians[k][(i, j)])));
        }
        row.push(u8::from(path.is_jump[k]).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON sidecar with the event list; floats use the shortest round-trip
/// representation so parsing gives back the same bits.
pub fn events_to_json<const D: usize>(events: &[JumpEvent<D>]) -> Result<String> {
    Ok(serde_json::to_string_pretty(events)?)
}

pub fn events_from_json<const D: usize>(json: &str) -> Result<Vec<JumpEvent<D>>> {
    Ok(serde_json::from_str(json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_flow::simulate_path;
    use crate::levy_model::StableLikeMeasure;
    use crate::models::Smooth2d;
    use crate::rng::StreamKey;
    use crate::Vector;

    #[test]
    fn event_sidecar_round_trips_bit_exactly() {
        let m = StableLikeMeasure::symmetric(2, 1.4, 0.02).unwrap();
        let p = simulate_path(&m, &Smooth2d { s0: 0.5, theta: 0.1 }, 0.0, Vector::<2>::new(0.3, 0.2), 2.0, 10, StreamKey::new(9))
            .unwrap();
        let events = p.jump_events();
        assert!(!events.is_empty());
        let back: Vec<JumpEvent<2>> = events_from_json(&events_to_json(&events).unwrap()).unwrap();
        assert_eq!(events.len(), back.len());
        for (a, b) in events.iter().zip(&back) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            for i in 0..2 {
                assert_eq!(a.mark[i].to_bits(), b.mark[i].to_bits());
            }
        }
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let m = StableLikeMeasure::symmetric(1, 1.4, 0.1).unwrap();
        let p = simulate_path(&m, &crate::models::Additive::new(1.0), 0.0, Vector::<1>::new(0.0), 1.0, 5, StreamKey::new(1)).unwrap();
        let mut buf = Vec::new();
        write_path_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), p.grid.len() + 1);
        assert!(text.starts_with("time,x1,j11,is_jump"));
    }
}
