# Test package marker for shared test helpers.
