//! Assigns users and posts to communities.
//!
//! A user belongs to the community of their majority tile (ties to the
//! smallest tile). Users whose majority tile was filtered out of the network
//! have no region.

use crate::community::Partition;
use crate::ingest::{PostRecord, UserLocationMap};

#[derive(Debug, Clone, Copy)]
pub struct RegionIndex<'a> {
    partition: &'a Partition,
    locations: &'a UserLocationMap,
}

/// A post with its origin region and the region of each located mention.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedPost<'p> {
    pub post: &'p PostRecord,
    pub origin: usize,
    /// One entry per mention event whose target has a region.
    pub targets: Vec<usize>,
}

impl RoutedPost<'_> {
    pub fn has_local(&self) -> bool {
        self.targets.contains(&self.origin)
    }

    pub fn has_outbound(&self) -> bool {
        self.targets.iter().any(|&t| t != self.origin)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Routing<'p> {
    pub posts: Vec<RoutedPost<'p>>,
    /// Posts whose author has no region.
    pub skipped_posts: u64,
    /// Mention events (from located authors) whose target has no region.
    pub skipped_mentions: u64,
}

impl<'a> RegionIndex<'a> {
    pub fn new(partition: &'a Partition, locations: &'a UserLocationMap) -> Self {
        RegionIndex {
            partition,
            locations,
        }
    }

    pub fn region_of_user(&self, user: &str) -> Option<usize> {
        let tile = self.locations.majority_tile(user)?;
        self.partition.community_of(tile)
    }

    pub fn region_count(&self) -> usize {
        self.partition.community_count()
    }

    pub fn route<'p>(&self, posts: &'p [PostRecord]) -> Routing<'p> {
        let mut routing = Routing::default();
        for post in posts {
            let Some(origin) = self.region_of_user(&post.author_id) else {
                routing.skipped_posts += 1;
                continue;
            };
            let mut targets = Vec::with_capacity(post.mentioned_ids.len());
            for m in &post.mentioned_ids {
                match self.region_of_user(m) {
                    Some(r) => targets.push(r),
                    None => routing.skipped_mentions += 1,
                }
            }
            routing.posts.push(RoutedPost {
                post,
                origin,
                targets,
            });
        }
        routing
    }
}
