# allocnet test suite
