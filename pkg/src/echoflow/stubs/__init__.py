"""Reference external programs: an echo engine for the bridge and file-I/O executables."""
