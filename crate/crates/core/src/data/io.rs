//! Interaction-log CSV.
//!
//! Header `student_id,question_id,kc_ids,response,timestamp`; KC ids of one
//! row are joined with `_`; response is `0` or `1`; timestamp is an integer.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::types::{Dataset, Interaction, KcId, QuestionId, StudentSequence};
use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["student_id", "question_id", "kc_ids", "response", "timestamp"];

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    fn id(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.ids.insert(name.to_string(), id);
        self.names.push(name.to_string());
        id
    }
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
        Some(rec) => rec?,
    };
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header '{}'", HEADER.join(",")),
        });
    }

    let mut questions = Interner::default();
    let mut kcs = Interner::default();
    let mut qmatrix: BTreeMap<QuestionId, Vec<KcId>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut by_student: HashMap<String, Vec<Interaction>> = HashMap::new();

    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if rec.len() != HEADER.len() {
            return Err(parse_err(format!("expected {} fields, got {}", HEADER.len(), rec.len())));
        }
        let student = rec[0].trim();
        if student.is_empty() {
            return Err(parse_err("empty student_id".into()));
        }
        let question_name = rec[1].trim();
        if question_name.is_empty() {
            return Err(parse_err("empty question_id".into()));
        }
        let kc_field = rec[2].trim();
        if kc_field.is_empty() {
            return Err(Error::Data(format!(
                "line {line}: question '{question_name}' has no KCs"
            )));
        }
        let response: u8 = match rec[3].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(format!("response must be 0 or 1, got '{other}'"))),
        };
        let timestamp: i64 = rec[4]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp '{}'", &rec[4])))?;

        let question = QuestionId(questions.id(question_name));
        let mut kc_set: Vec<KcId> = Vec::new();
        for part in kc_field.split('_') {
            if part.is_empty() {
                return Err(parse_err(format!("empty KC id in '{kc_field}'")));
            }
            let k = KcId(kcs.id(part));
            if !kc_set.contains(&k) {
                kc_set.push(k);
            }
        }
        kc_set.sort_unstable();
        match qmatrix.get(&question) {
            Some(existing) if *existing != kc_set => {
                return Err(Error::Data(format!(
                    "line {line}: question '{question_name}' appears with different KC sets"
                )));
            }
            Some(_) => {}
            None => {
                qmatrix.insert(question, kc_set.clone());
            }
        }

        let entry = by_student.entry(student.to_string()).or_insert_with(|| {
            order.push(student.to_string());
            Vec::new()
        });
        entry.push(Interaction::new(question, kc_set, response, timestamp)?);
    }

    let sequences = order
        .into_iter()
        .map(|sid| {
            let mut interactions = by_student.remove(&sid).unwrap_or_default();
            interactions.sort_by_key(|it| it.timestamp);
            StudentSequence {
                student_id: sid,
                interactions,
            }
        })
        .collect();

    Ok(Dataset {
        sequences,
        n: questions.names.len(),
        m: kcs.names.len(),
        qmatrix,
        question_names: questions.names,
        kc_names: kcs.names,
    })
}

pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for seq in &ds.sequences {
        for it in &seq.interactions {
            let kcs: Vec<&str> = it
                .kcs
                .iter()
                .map(|k| ds.kc_names[k.index()].as_str())
                .collect();
            w.write_record([
                seq.student_id.as_str(),
                ds.question_names[it.question.index()].as_str(),
                &kcs.join("_"),
                if it.response == 1 { "1" } else { "0" },
                &it.timestamp.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "student_id,question_id,kc_ids,response,timestamp\n\
                         u1,A,X,1,0\n\
                         u1,B,X_Y,0,5\n";

    #[test]
    fn parses_small_file() {
        let ds = read_dataset(SMALL.as_bytes()).unwrap();
        assert_eq!((ds.n, ds.m), (2, 2));
        assert_eq!(ds.sequences.len(), 1);
        assert_eq!(ds.sequences[0].len(), 2);
        assert_eq!(ds.sequences[0].interactions[1].kcs, vec![KcId(0), KcId(1)]);
        ds.validate().unwrap();
    }

    #[test]
    fn empty_and_duplicate_header_fail() {
        assert!(matches!(read_dataset("".as_bytes()), Err(Error::Parse { .. })));
        let dup = format!("{SMALL}student_id,question_id,kc_ids,response,timestamp\n");
        match read_dataset(dup.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let bad = "student_id,question_id,kc_ids,response,timestamp\nu1,A,X,1,0\nu1,A,X,2,3\n";
        match read_dataset(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let short = "student_id,question_id,kc_ids,response,timestamp\nu1,A,X,1\n";
        assert!(matches!(read_dataset(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_kc_field_is_data_error() {
        let bad = "student_id,question_id,kc_ids,response,timestamp\nu1,A,,1,0\n";
        assert!(matches!(read_dataset(bad.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn inconsistent_qmatrix_is_data_error() {
        let bad = "student_id,question_id,kc_ids,response,timestamp\nu1,A,X,1,0\nu2,A,Y,1,0\n";
        assert!(matches!(read_dataset(bad.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn rows_are_sorted_by_timestamp() {
        let rows = "student_id,question_id,kc_ids,response,timestamp\nu1,A,X,1,9\nu1,B,X,0,2\n";
        let ds = read_dataset(rows.as_bytes()).unwrap();
        assert!(ds.sequences[0].is_chronological());
        assert_eq!(ds.sequences[0].interactions[0].timestamp, 2);
    }

    #[test]
    fn write_then_read_preserves_interactions() {
        let ds = read_dataset(SMALL.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), SMALL);
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }
}
