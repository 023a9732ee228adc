"""Joint angular-margin softmax and batch-hard triplet embedding learning."""
