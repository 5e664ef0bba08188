"""Knowledge-base completion with sampled and all-entity negatives."""
