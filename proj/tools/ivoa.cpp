// Placeholder main; subcommands are wired in once the pipeline exists.
int main() { return 0; }
