# Test suite for knobtune
