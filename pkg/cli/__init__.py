"""
Command-line surface. Each module in cli.commands contributes one
subcommand through register(subparsers) and run(args) -> exit status.
"""
