//! Annotation data: `<resource, user, tag>` tuples with interned identifiers.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub resource: u32,
    pub user: u32,
    pub tag: u32,
}

/// One user's bookmark of one resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Post {
    pub resource: u32,
    pub user: u32,
    pub tags: Vec<u32>,
}

/// Bidirectional map between original string identifiers and dense ids.
///
/// Ids are assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    /// `resource<TAB>user<TAB>tag`
    Triples,
    /// `resource<TAB>user<TAB>tag1,tag2,...`
    Posts,
}

/// Immutable annotation corpus. Duplicate tuples are distinct annotation events.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    triples: Vec<Triple>,
    resources: Dictionary,
    users: Dictionary,
    tags: Dictionary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub resources: usize,
    pub users: usize,
    pub tags: usize,
    pub triples: usize,
}

impl CorpusStats {
    pub const CSV_HEADER: &'static str = "resources,users,tags,triples";

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{}\n",
            Self::CSV_HEADER,
            self.resources,
            self.users,
            self.tags,
            self.triples
        )
    }
}

impl Corpus {
    pub fn builder() -> CorpusBuilder {
        CorpusBuilder::default()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn n_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn resources(&self) -> &Dictionary {
        &self.resources
    }

    pub fn users(&self) -> &Dictionary {
        &self.users
    }

    pub fn tags(&self) -> &Dictionary {
        &self.tags
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            resources: self.n_resources(),
            users: self.n_users(),
            tags: self.n_tags(),
            triples: self.len(),
        }
    }

    /// Number of tuples per resource (N_r).
    pub fn resource_totals(&self) -> Vec<u32> {
        let mut totals = vec![0u32; self.n_resources()];
        for t in &self.triples {
            totals[t.resource as usize] += 1;
        }
        totals
    }

    /// Number of tuples per user (N_u).
    pub fn user_totals(&self) -> Vec<u32> {
        let mut totals = vec![0u32; self.n_users()];
        for t in &self.triples {
            totals[t.user as usize] += 1;
        }
        totals
    }

    /// Groups consecutive tuples sharing `(resource, user)` back into posts.
    pub fn posts(&self) -> Vec<Post> {
        let mut posts: Vec<Post> = Vec::new();
        for t in &self.triples {
            match posts.last_mut() {
                Some(p) if p.resource == t.resource && p.user == t.user && !p.tags.contains(&t.tag) => {
                    p.tags.push(t.tag)
                }
                _ => posts.push(Post {
                    resource: t.resource,
                    user: t.user,
                    tags: vec![t.tag],
                }),
            }
        }
        posts
    }

    /// Writes the corpus in triple format, one tuple per line.
    pub fn write_triples<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.resources.names[t.resource as usize],
                self.users.names[t.user as usize],
                self.tags.names[t.tag as usize]
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the corpus in post format.
    pub fn write_posts<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for p in self.posts() {
            let tags: Vec<&str> = p.tags.iter().map(|&t| self.tags.names[t as usize].as_str()).collect();
            writeln!(
                out,
                "{}\t{}\t{}",
                self.resources.names[p.resource as usize],
                self.users.names[p.user as usize],
                tags.join(",")
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct CorpusBuilder {
    corpus: Corpus,
}

impl CorpusBuilder {
    pub fn push_triple(&mut self, resource: &str, user: &str, tag: &str) -> &mut Self {
        let triple = Triple {
            resource: self.corpus.resources.intern(resource),
            user: self.corpus.users.intern(user),
            tag: self.corpus.tags.intern(tag),
        };
        self.corpus.triples.push(triple);
        self
    }

    pub fn push_post<S: AsRef<str>>(&mut self, resource: &str, user: &str, tags: &[S]) -> &mut Self {
        for tag in tags {
            self.push_triple(resource, user, tag.as_ref());
        }
        self
    }

    /// Registers a tag in the vocabulary without adding a tuple.
    pub fn intern_tag(&mut self, tag: &str) -> u32 {
        self.corpus.tags.intern(tag)
    }

    pub fn len(&self) -> usize {
        self.corpus.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.triples.is_empty()
    }

    pub fn build(self) -> Result<Corpus> {
        if self.corpus.triples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(self.corpus)
    }
}

/// Parses tab-separated annotation lines. Lines starting with `#` and blank lines are skipped.
pub fn parse_triples<R: BufRead>(reader: R, format: InputFormat) -> Result<Corpus> {
    let mut builder = Corpus::builder();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
            return Err(malformed(format!("field {} is empty", pos + 1)));
        }
        let (resource, user) = (fields[0], fields[1]);
        match format {
            InputFormat::Triples => {
                builder.push_triple(resource, user, fields[2]);
            }
            InputFormat::Posts => {
                let mut tags: Vec<&str> = Vec::with_capacity(8);
                for tag in fields[2].split(',') {
                    if tag.is_empty() {
                        return Err(malformed("empty tag in tag list".into()));
                    }
                    if tags.contains(&tag) {
                        return Err(malformed(format!("duplicate tag `{tag}` in post")));
                    }
                    tags.push(tag);
                }
                builder.push_post(resource, user, &tags);
            }
        }
    }
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: InputFormat) -> Result<Corpus> {
        parse_triples(text.as_bytes(), format)
    }

    #[test]
    fn single_record() {
        let c = parse("urlA\tu1\tjaguar\n", InputFormat::Triples).unwrap();
        assert_eq!(c.stats(), CorpusStats { resources: 1, users: 1, tags: 1, triples: 1 });
    }

    #[test]
    fn post_expands_into_triples() {
        let c = parse("urlA\tu1\tjaguar,cars\n", InputFormat::Posts).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.triples()[0].resource, c.triples()[1].resource);
        assert_eq!(c.triples()[0].user, c.triples()[1].user);
        assert_ne!(c.triples()[0].tag, c.triples()[1].tag);
    }

    #[test]
    fn duplicate_lines_are_distinct_tuples() {
        let c = parse("urlA\tu1\tjaguar\nurlA\tu1\tjaguar\n", InputFormat::Triples).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.n_tags(), 1);
    }

    #[test]
    fn ids_follow_first_appearance() {
        let c = parse("b\tu2\tx\na\tu1\ty\nb\tu1\tx\n", InputFormat::Triples).unwrap();
        assert_eq!(c.resources().names(), &["b".to_string(), "a".to_string()]);
        assert_eq!(c.users().id("u1"), Some(1));
        assert_eq!(c.triples()[2], Triple { resource: 0, user: 1, tag: 0 });
    }

    #[test]
    fn tags_are_case_sensitive() {
        let c = parse("r\tu\ttravel\nr\tu\tTravel\n", InputFormat::Triples).unwrap();
        assert_eq!(c.n_tags(), 2);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let c = parse("# header\n\nr\tu\tt\r\n", InputFormat::Triples).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.tags().name(0), Some("t"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("r\tu\tt\nbroken line\n", InputFormat::Triples).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("r\t\tt\n", InputFormat::Triples).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse("r\tu\ta,,b\n", InputFormat::Posts).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse("r\tu\ta,a\n", InputFormat::Posts).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(parse("", InputFormat::Triples), Err(Error::EmptyCorpus)));
        assert!(matches!(parse("# only a comment\n", InputFormat::Posts), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn stats_on_hand_counted_fixture() {
        let text = "r1\tu1\ta\nr1\tu2\tb\nr2\tu1\ta\nr2\tu3\tc\nr1\tu1\tc\n";
        let c = parse(text, InputFormat::Triples).unwrap();
        assert_eq!(c.stats(), CorpusStats { resources: 2, users: 3, tags: 3, triples: 5 });
        assert_eq!(c.stats().to_csv(), "resources,users,tags,triples\n2,3,3,5\n");
        assert_eq!(c.resource_totals(), vec![3, 2]);
        assert_eq!(c.user_totals(), vec![3, 1, 1]);
    }

    #[test]
    fn empty_stats_are_zero() {
        assert_eq!(Corpus::default().stats(), CorpusStats::default());
    }

    #[test]
    fn posts_round_trip_through_post_format() {
        let text = "r1\tu1\ta,b,c\nr2\tu1\ta\nr1\tu2\tb,d\n";
        let c = parse(text, InputFormat::Posts).unwrap();
        let mut out = Vec::new();
        c.write_posts(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }
}
