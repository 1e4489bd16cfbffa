"""RV64GC shellcode in alphanumeric-plus-one-symbol charsets."""
